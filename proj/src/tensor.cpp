#include "cpdrums/tensor.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cpdrums::nn {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <class S>
Var Tape<S>::constant(Mat<S> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

template <class S>
Var Tape<S>::param(Param<S>& p) {
  Node n;
  n.value = p.value;
  n.needs = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

template <class S>
Var Tape<S>::push(Mat<S> value, const std::vector<Var>& parents, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& p : parents) {
    if (p.valid() && needs_grad(p)) n.needs = true;
  }
  if (n.needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

template <class S>
Mat<S>& Tape<S>::grad(Var v) {
  auto& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.has_grad) {
    n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

template <class S>
void Tape<S>::backward(Var root, S seed) {
  if (!needs_grad(root)) return;
  grad(root).setConstant(seed);
  for (int i = root.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      if (n.param->grad.size() == 0) n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

namespace {

template <class S>
void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

template <class S>
Var matmul(Tape<S>& t, Var a, Var b) {
  require<S>(t.value(a).cols() == t.value(b).rows(), "matmul: inner dimensions differ");
  return t.push(t.value(a) * t.value(b), {a, b}, [a, b](Tape<S>& t, int self) {
    const auto& g = t.grad_of(self);
    if (t.needs_grad(a)) t.grad(a).noalias() += g * t.value(b).transpose();
    if (t.needs_grad(b)) t.grad(b).noalias() += t.value(a).transpose() * g;
  });
}

template <class S>
Var add(Tape<S>& t, Var a, Var b) {
  require<S>(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(),
             "add: shapes differ");
  return t.push(t.value(a) + t.value(b), {a, b}, [a, b](Tape<S>& t, int self) {
    if (t.needs_grad(a)) t.grad(a) += t.grad_of(self);
    if (t.needs_grad(b)) t.grad(b) += t.grad_of(self);
  });
}

template <class S>
Var mul(Tape<S>& t, Var a, Var b) {
  require<S>(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(),
             "mul: shapes differ");
  return t.push(t.value(a).cwiseProduct(t.value(b)), {a, b}, [a, b](Tape<S>& t, int self) {
    if (t.needs_grad(a)) t.grad(a) += t.grad_of(self).cwiseProduct(t.value(b));
    if (t.needs_grad(b)) t.grad(b) += t.grad_of(self).cwiseProduct(t.value(a));
  });
}

template <class S>
Var scale(Tape<S>& t, Var a, S s) {
  return t.push(t.value(a) * s, {a}, [a, s](Tape<S>& t, int self) { t.grad(a) += t.grad_of(self) * s; });
}

template <class S>
Var add_row(Tape<S>& t, Var a, Var bias) {
  require<S>(t.value(bias).rows() == 1 && t.value(bias).cols() == t.value(a).cols(),
             "add_row: bias must be 1 x cols");
  Mat<S> out = t.value(a).rowwise() + t.value(bias).row(0);
  return t.push(std::move(out), {a, bias}, [a, bias](Tape<S>& t, int self) {
    if (t.needs_grad(a)) t.grad(a) += t.grad_of(self);
    if (t.needs_grad(bias)) t.grad(bias) += t.grad_of(self).colwise().sum();
  });
}

template <class S>
Var tanh(Tape<S>& t, Var a) {
  Mat<S> out = t.value(a).array().tanh().matrix();
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) {
    const auto& y = t.value(Var{self});
    t.grad(a).array() += t.grad_of(self).array() * (S(1) - y.array().square());
  });
}

template <class S>
Var sigmoid(Tape<S>& t, Var a) {
  Mat<S> out = (S(1) / (S(1) + (-t.value(a).array()).exp())).matrix();
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) {
    const auto& y = t.value(Var{self});
    t.grad(a).array() += t.grad_of(self).array() * y.array() * (S(1) - y.array());
  });
}

template <class S>
Var relu(Tape<S>& t, Var a) {
  Mat<S> out = t.value(a).cwiseMax(S(0));
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) {
    t.grad(a).array() += (t.value(a).array() > S(0)).template cast<S>() * t.grad_of(self).array();
  });
}

template <class S>
Var gelu(Tape<S>& t, Var a) {
  const S c = static_cast<S>(0.7978845608028654);  // sqrt(2 / pi)
  const S k = static_cast<S>(0.044715);
  const auto& x = t.value(a).array();
  const auto th = (c * (x + k * x.cube())).tanh().eval();
  Mat<S> out = (S(0.5) * x * (S(1) + th)).matrix();
  return t.push(std::move(out), {a}, [a, th, c, k](Tape<S>& t, int self) {
    const auto& x = t.value(a).array();
    const auto d = S(0.5) * (S(1) + th) + S(0.5) * x * (S(1) - th.square()) * c * (S(1) + S(3) * k * x.square());
    t.grad(a).array() += t.grad_of(self).array() * d;
  });
}

template <class S>
Var sum(Tape<S>& t, Var a) {
  Mat<S> out(1, 1);
  out(0, 0) = t.value(a).sum();
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) { t.grad(a).array() += t.grad_of(self)(0, 0); });
}

template <class S>
Var concat_cols(Tape<S>& t, const std::vector<Var>& parts) {
  require<S>(!parts.empty(), "concat_cols: no inputs");
  const auto rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require<S>(t.value(p).rows() == rows, "concat_cols: row counts differ");
    cols += t.value(p).cols();
  }
  Mat<S> out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, t.value(p).cols()) = t.value(p);
    at += t.value(p).cols();
  }
  return t.push(std::move(out), parts, [parts](Tape<S>& t, int self) {
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      const auto c = t.value(p).cols();
      if (t.needs_grad(p)) t.grad(p) += t.grad_of(self).middleCols(at, c);
      at += c;
    }
  });
}

template <class S>
Var take_row(Tape<S>& t, Var a, int row) {
  require<S>(row >= 0 && row < t.value(a).rows(), "take_row: row out of range");
  Mat<S> out = t.value(a).row(row);
  return t.push(std::move(out), {a}, [a, row](Tape<S>& t, int self) { t.grad(a).row(row) += t.grad_of(self); });
}

template <class S>
Var repeat_rows(Tape<S>& t, Var row, int n) {
  require<S>(t.value(row).rows() == 1, "repeat_rows: expects a single row");
  Mat<S> out = t.value(row).replicate(n, 1);
  return t.push(std::move(out), {row}, [row](Tape<S>& t, int self) {
    t.grad(row) += t.grad_of(self).colwise().sum();
  });
}

template <class S>
Var embed(Tape<S>& t, Var table, const std::vector<int>& ids) {
  const auto& w = t.value(table);
  Mat<S> out(static_cast<Eigen::Index>(ids.size()), w.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= w.rows()) {
      throw ShapeError("embed: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(w.rows()));
    }
    out.row(static_cast<Eigen::Index>(i)) = w.row(ids[i]);
  }
  return t.push(std::move(out), {table}, [table, ids](Tape<S>& t, int self) {
    auto& g = t.grad(table);
    const auto& up = t.grad_of(self);
    for (std::size_t i = 0; i < ids.size(); ++i) g.row(ids[i]) += up.row(static_cast<Eigen::Index>(i));
  });
}

template <class S>
Var linear(Tape<S>& t, Var x, Var w, Var b) {
  return add_row(t, matmul(t, x, w), b);
}

template <class S>
Var layer_norm(Tape<S>& t, Var x, Var gain, Var bias, S eps) {
  const auto& xv = t.value(x);
  const auto n = xv.cols();
  require<S>(t.value(gain).cols() == n && t.value(bias).cols() == n, "layer_norm: parameter width");
  Mat<S> xhat(xv.rows(), n);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const S mean = xv.row(r).mean();
    const S var = (xv.row(r).array() - mean).square().mean();
    inv(r) = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv(r);
  }
  Mat<S> out = (xhat.array().rowwise() * t.value(gain).row(0).array()).matrix();
  out.rowwise() += t.value(bias).row(0);
  return t.push(std::move(out), {x, gain, bias}, [x, gain, bias, xhat, inv](Tape<S>& t, int self) {
    const auto& g = t.grad_of(self);
    if (t.needs_grad(gain)) t.grad(gain) += g.cwiseProduct(xhat).colwise().sum();
    if (t.needs_grad(bias)) t.grad(bias) += g.colwise().sum();
    if (t.needs_grad(x)) {
      const Mat<S> dxhat = (g.array().rowwise() * t.value(gain).row(0).array()).matrix();
      auto& dx = t.grad(x);
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const S m1 = dxhat.row(r).mean();
        const S m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
        dx.row(r).array() += inv(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
      }
    }
  });
}

template <class S>
Var dropout(Tape<S>& t, Var x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  const auto& xv = t.value(x);
  Mat<S> mask(xv.rows(), xv.cols());
  const S keep = static_cast<S>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = uniform01(rng) < p ? S(0) : keep;
  Mat<S> out = xv.cwiseProduct(mask);
  return t.push(std::move(out), {x}, [x, mask](Tape<S>& t, int self) {
    t.grad(x) += t.grad_of(self).cwiseProduct(mask);
  });
}

template <class S>
Var cross_entropy(Tape<S>& t, Var logits, const std::vector<int>& targets, int ignore) {
  const auto& z = t.value(logits);
  require<S>(static_cast<std::size_t>(z.rows()) == targets.size(), "cross_entropy: one target per row");
  Mat<S> probs(z.rows(), z.cols());
  S total = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const S mx = z.row(r).maxCoeff();
    probs.row(r) = (z.row(r).array() - mx).exp();
    const S norm = probs.row(r).sum();
    probs.row(r) /= norm;
    const int y = targets[static_cast<std::size_t>(r)];
    if (y == ignore) continue;
    if (y < 0 || y >= z.cols()) throw ShapeError("cross_entropy: target outside vocabulary");
    total += std::log(norm) + mx - z(r, y);
  }
  Mat<S> out(1, 1);
  out(0, 0) = total;
  return t.push(std::move(out), {logits}, [logits, targets, ignore, probs](Tape<S>& t, int self) {
    const S g = t.grad_of(self)(0, 0);
    auto& dz = t.grad(logits);
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      const int y = targets[static_cast<std::size_t>(r)];
      if (y == ignore) continue;
      dz.row(r) += g * probs.row(r);
      dz(r, y) -= g;
    }
  });
}

template <class S>
Var lstm(Tape<S>& t, Var gx, Var wh, bool reverse) {
  const auto& G = t.value(gx);
  const auto& W = t.value(wh);
  const auto H = W.rows();
  require<S>(W.cols() == 4 * H && G.cols() == 4 * H, "lstm: gate widths must be 4H");
  const auto L = G.rows();
  Mat<S> h = Mat<S>::Zero(L, H);
  Mat<S> c = Mat<S>::Zero(L, H);
  Mat<S> gates(L, 4 * H);  // activated i f g o
  Mat<S> hp = Mat<S>::Zero(1, H), cp = Mat<S>::Zero(1, H);
  for (Eigen::Index s = 0; s < L; ++s) {
    const auto r = reverse ? L - 1 - s : s;
    Mat<S> a = G.row(r) + hp * W;
    auto i = (S(1) / (S(1) + (-a.leftCols(H).array()).exp())).eval();
    auto f = (S(1) / (S(1) + (-a.middleCols(H, H).array()).exp())).eval();
    auto g = a.middleCols(2 * H, H).array().tanh().eval();
    auto o = (S(1) / (S(1) + (-a.rightCols(H).array()).exp())).eval();
    gates.row(r) << i.matrix(), f.matrix(), g.matrix(), o.matrix();
    cp = (f * cp.array() + i * g).matrix();
    hp = (o * cp.array().tanh()).matrix();
    c.row(r) = cp;
    h.row(r) = hp;
  }
  return t.push(h, {gx, wh}, [gx, wh, gates, c, h, reverse](Tape<S>& t, int self) {
    const auto& dH = t.grad_of(self);
    const auto& W = t.value(wh);
    const auto H = W.rows();
    const auto L = dH.rows();
    Mat<S> dG(L, 4 * H);
    Mat<S> dh_next = Mat<S>::Zero(1, H), dc_next = Mat<S>::Zero(1, H);
    for (Eigen::Index s = L - 1; s >= 0; --s) {
      const auto r = reverse ? L - 1 - s : s;
      const auto prev = reverse ? r + 1 : r - 1;
      const bool first = s == 0;
      const auto i = gates.row(r).leftCols(H).array();
      const auto f = gates.row(r).middleCols(H, H).array();
      const auto g = gates.row(r).middleCols(2 * H, H).array();
      const auto o = gates.row(r).rightCols(H).array();
      const auto tc = c.row(r).array().tanh().eval();
      const auto dh = (dH.row(r).array() + dh_next.array()).eval();
      const auto dc = (dh * o * (S(1) - tc.square()) + dc_next.array()).eval();
      const auto cprev = first ? Mat<S>::Zero(1, H).eval() : Mat<S>(c.row(prev));
      dG.row(r) << (dc * g * i * (S(1) - i)).matrix(), (dc * cprev.array() * f * (S(1) - f)).matrix(),
          (dc * i * (S(1) - g.square())).matrix(), (dh * tc * o * (S(1) - o)).matrix();
      dc_next = (dc * f).matrix();
      dh_next = dG.row(r) * W.transpose();
    }
    if (t.needs_grad(gx)) t.grad(gx) += dG;
    if (t.needs_grad(wh)) {
      // h_prev for every processed row: shifted copy of h along the processing direction
      Mat<S> hprev = Mat<S>::Zero(L, H);
      for (Eigen::Index s = 1; s < L; ++s) {
        const auto r = reverse ? L - 1 - s : s;
        hprev.row(r) = h.row(reverse ? r + 1 : r - 1);
      }
      t.grad(wh).noalias() += hprev.transpose() * dG;
    }
  });
}

template <class S>
Mat<S> skew(const Mat<S>& qer) {
  const auto L = qer.rows();
  // pad one zero column on the left: L x (L+1)
  Mat<S> padded = Mat<S>::Zero(L, L + 1);
  padded.rightCols(L) = qer;
  // reinterpret the same buffer as (L+1) x L and drop the first row
  Eigen::Map<const Mat<S>> reshaped(padded.data(), L + 1, L);
  return reshaped.bottomRows(L);
}

namespace {

/// Relative table rows for a length-L query, ordered as skew() expects.
template <class S>
Mat<S> relative_rows(const Mat<S>& rel, int head, int window, Eigen::Index L) {
  const auto dh = rel.cols();
  Mat<S> er(L, dh);
  for (Eigen::Index m = 0; m < L; ++m) {
    const auto dist = std::min<Eigen::Index>(L - 1 - m, window);
    er.row(m) = rel.row(static_cast<Eigen::Index>(head) * (window + 1) + dist);
  }
  return er;
}

}  // namespace

template <class S>
Var attention(Tape<S>& t, Var q, Var k, Var v, Var rel, const AttentionSpec& spec) {
  const auto& Q = t.value(q);
  const auto& K = t.value(k);
  const auto& V = t.value(v);
  const auto D = Q.cols();
  const int heads = spec.heads;
  require<S>(heads > 0 && D % heads == 0, "attention: width not divisible by heads");
  require<S>(K.cols() == D && V.cols() == D && K.rows() == V.rows(), "attention: q/k/v shapes differ");
  const auto dh = D / heads;
  const auto Lq = Q.rows(), Lk = K.rows();
  const bool relative = rel.valid();
  if (relative) {
    require<S>(spec.causal && Lq == Lk, "attention: relative logits need causal self-attention");
    require<S>(spec.window >= 0 && t.value(rel).rows() == heads * (spec.window + 1) && t.value(rel).cols() == dh,
               "attention: relative table shape");
  }
  if (spec.causal) require<S>(Lq == Lk, "attention: causal mask needs equal lengths");
  const S inv = S(1) / std::sqrt(static_cast<S>(dh));

  std::vector<Mat<S>> probs(static_cast<std::size_t>(heads));
  Mat<S> out(Lq, D);
  for (int h = 0; h < heads; ++h) {
    const auto qh = Q.middleCols(h * dh, dh);
    Mat<S> logits = qh * K.middleCols(h * dh, dh).transpose();
    if (relative) logits += skew<S>(qh * relative_rows(t.value(rel), h, spec.window, Lq).transpose());
    logits *= inv;
    auto& p = probs[static_cast<std::size_t>(h)];
    p.resize(Lq, Lk);
    for (Eigen::Index i = 0; i < Lq; ++i) {
      const auto upto = spec.causal ? i + 1 : Lk;
      const S mx = logits.row(i).head(upto).maxCoeff();
      p.row(i).setZero();
      p.row(i).head(upto) = (logits.row(i).head(upto).array() - mx).exp();
      p.row(i) /= p.row(i).sum();
    }
    out.middleCols(h * dh, dh).noalias() = p * V.middleCols(h * dh, dh);
  }
  return t.push(std::move(out), {q, k, v, rel}, [q, k, v, rel, spec, probs, inv, dh](Tape<S>& t, int self) {
    const auto& g = t.grad_of(self);
    const auto& Q = t.value(q);
    const auto& K = t.value(k);
    const auto& V = t.value(v);
    const auto L = Q.rows();
    for (int h = 0; h < spec.heads; ++h) {
      const auto& p = probs[static_cast<std::size_t>(h)];
      const auto gh = g.middleCols(h * dh, dh);
      if (t.needs_grad(v)) t.grad(v).middleCols(h * dh, dh).noalias() += p.transpose() * gh;
      const Mat<S> dp = gh * V.middleCols(h * dh, dh).transpose();
      Mat<S> ds = p.cwiseProduct(dp);
      const Eigen::Matrix<S, Eigen::Dynamic, 1> rowdot = ds.rowwise().sum();
      ds -= (p.array().colwise() * rowdot.array()).matrix();
      ds *= inv;
      if (t.needs_grad(q)) t.grad(q).middleCols(h * dh, dh).noalias() += ds * K.middleCols(h * dh, dh);
      if (t.needs_grad(k)) t.grad(k).middleCols(h * dh, dh).noalias() += ds.transpose() * Q.middleCols(h * dh, dh);
      if (rel.valid()) {
        // inverse of skew on the causal triangle: S[i][j] came from QEr[i][L-1-(i-j)]
        Mat<S> dqer = Mat<S>::Zero(L, L);
        for (Eigen::Index i = 0; i < L; ++i) {
          for (Eigen::Index j = 0; j <= i; ++j) dqer(i, L - 1 - (i - j)) = ds(i, j);
        }
        const Mat<S> er = relative_rows(t.value(rel), h, spec.window, L);
        const auto qh = Q.middleCols(h * dh, dh);
        if (t.needs_grad(q)) t.grad(q).middleCols(h * dh, dh).noalias() += dqer * er;
        if (t.needs_grad(rel)) {
          const Mat<S> der = dqer.transpose() * qh;
          auto& dr = t.grad(rel);
          for (Eigen::Index m = 0; m < L; ++m) {
            const auto dist = std::min<Eigen::Index>(L - 1 - m, spec.window);
            dr.row(static_cast<Eigen::Index>(h) * (spec.window + 1) + dist) += der.row(m);
          }
        }
      }
    }
  });
}

#define CPDRUMS_INSTANTIATE(S)                                                                      \
  template class Tape<S>;                                                                           \
  template Var matmul(Tape<S>&, Var, Var);                                                          \
  template Var add(Tape<S>&, Var, Var);                                                             \
  template Var mul(Tape<S>&, Var, Var);                                                             \
  template Var scale(Tape<S>&, Var, S);                                                             \
  template Var add_row(Tape<S>&, Var, Var);                                                         \
  template Var tanh(Tape<S>&, Var);                                                                 \
  template Var sigmoid(Tape<S>&, Var);                                                              \
  template Var relu(Tape<S>&, Var);                                                                 \
  template Var gelu(Tape<S>&, Var);                                                                 \
  template Var sum(Tape<S>&, Var);                                                                  \
  template Var concat_cols(Tape<S>&, const std::vector<Var>&);                                      \
  template Var take_row(Tape<S>&, Var, int);                                                        \
  template Var repeat_rows(Tape<S>&, Var, int);                                                     \
  template Var embed(Tape<S>&, Var, const std::vector<int>&);                                       \
  template Var linear(Tape<S>&, Var, Var, Var);                                                     \
  template Var layer_norm(Tape<S>&, Var, Var, Var, S);                                              \
  template Var dropout(Tape<S>&, Var, double, std::mt19937_64&);                                    \
  template Var cross_entropy(Tape<S>&, Var, const std::vector<int>&, int);                          \
  template Var lstm(Tape<S>&, Var, Var, bool);                                                      \
  template Var attention(Tape<S>&, Var, Var, Var, Var, const AttentionSpec&);                       \
  template Mat<S> skew(const Mat<S>&);

CPDRUMS_INSTANTIATE(float)
CPDRUMS_INSTANTIATE(double)

}  // namespace cpdrums::nn
