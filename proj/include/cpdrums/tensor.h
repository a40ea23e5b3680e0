/**
 * @file tensor.h
 * @brief Reverse-mode differentiation over row-major matrices.
 *
 * A Tape records every operation of one forward pass. Values are 2-D (rows are
 * sequence positions); scalars are 1x1. Parameters live outside the tape and receive
 * accumulated gradients when Tape::backward runs.
 */

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cpdrums::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <class S>
struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  bool decay = true;  // subject to weight decay

  void zero_grad() { grad = Mat<S>::Zero(value.rows(), value.cols()); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t splitmix64(std::uint64_t x);

template <class S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Var constant(Mat<S> value);
  Var param(Param<S>& p);
  Var push(Mat<S> value, const std::vector<Var>& parents, Backward backward);

  const Mat<S>& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs; }
  /// Gradient buffer of `v`, zero-initialized on first access.
  Mat<S>& grad(Var v);
  const Mat<S>& grad_of(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  /// Back-propagates `seed * d(root)` and adds parameter gradients into Param::grad.
  void backward(Var root, S seed = S(1));

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    bool has_grad = false;
    bool needs = false;
    Param<S>* param = nullptr;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Elementwise and linear algebra.
template <class S> Var matmul(Tape<S>& t, Var a, Var b);
template <class S> Var add(Tape<S>& t, Var a, Var b);
template <class S> Var mul(Tape<S>& t, Var a, Var b);
template <class S> Var scale(Tape<S>& t, Var a, S s);
/// a (n x m) + bias (1 x m) on every row.
template <class S> Var add_row(Tape<S>& t, Var a, Var bias);
template <class S> Var tanh(Tape<S>& t, Var a);
template <class S> Var sigmoid(Tape<S>& t, Var a);
template <class S> Var relu(Tape<S>& t, Var a);
/// tanh approximation of GELU.
template <class S> Var gelu(Tape<S>& t, Var a);
template <class S> Var sum(Tape<S>& t, Var a);

// Shape.
template <class S> Var concat_cols(Tape<S>& t, const std::vector<Var>& parts);
template <class S> Var take_row(Tape<S>& t, Var a, int row);
template <class S> Var repeat_rows(Tape<S>& t, Var row, int n);

/// Rows of `table` selected by `ids`. Throws ShapeError on an out-of-range id.
template <class S> Var embed(Tape<S>& t, Var table, const std::vector<int>& ids);
/// x @ w + b.
template <class S> Var linear(Tape<S>& t, Var x, Var w, Var b);
template <class S> Var layer_norm(Tape<S>& t, Var x, Var gain, Var bias, S eps = S(1e-5));
/// Inverted dropout; identity when `p` is 0.
template <class S> Var dropout(Tape<S>& t, Var x, double p, std::mt19937_64& rng);

/// Summed cross entropy of softmax(logits) rows against `targets`; rows whose target is
/// `ignore` contribute nothing. Returns a 1x1 value.
template <class S> Var cross_entropy(Tape<S>& t, Var logits, const std::vector<int>& targets, int ignore = 0);

/// One LSTM direction. `gx` holds input projections plus bias (L x 4H, gate order i f g o),
/// `wh` the recurrent weights (H x 4H). Returns all hidden states (L x H) in time order.
template <class S> Var lstm(Tape<S>& t, Var gx, Var wh, bool reverse);

struct AttentionSpec {
  int heads = 1;
  bool causal = true;
  int window = 0;  // largest relative distance with its own embedding
};

/// Multi-head scaled dot-product attention. With a relative table `rel`
/// (heads * (window + 1) rows, d_head columns; row h*(window+1)+r is distance r for head h)
/// the skewed relative logits are added before scaling; this requires causal self-attention.
template <class S> Var attention(Tape<S>& t, Var q, Var k, Var v, Var rel, const AttentionSpec& spec);

/// Relative logits rearranged from distance-indexed columns (column m = distance L-1-m)
/// to key-indexed columns by pad, reshape and slice. Entries above the diagonal are
/// meaningless and must be masked.
template <class S> Mat<S> skew(const Mat<S>& qer);

}  // namespace cpdrums::nn
