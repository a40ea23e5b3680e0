/**
 * @file model.h
 * @brief BiLSTM condition encoder and relative-attention Transformer drum decoder.
 *
 * Encoder: per-dimension embeddings of the 5-D condition words, concatenated and
 * projected to model width, then a stacked bidirectional LSTM. z is a projection of the
 * top layer's final forward and backward states.
 * Decoder: per-dimension embeddings of the 2-D drum words concatenated with z, projected
 * to model width, then pre-norm causal blocks with relative global attention and a
 * feed-forward layer. Two heads read the shared final state: onset and drums.
 */

#pragma once

#include <array>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpdrums/codec.h"
#include "cpdrums/tensor.h"

namespace cpdrums::nn {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  std::string preset = "desk";
  std::array<int, 5> enc_emb_sizes{16, 4, 8, 16, 16};
  std::array<int, 2> dec_emb_sizes{24, 24};
  int model_dim = 64;
  int bilstm_layers = 2;
  int bilstm_hidden = 64;
  int dec_layers = 2;
  int heads = 2;
  int ffn_dim = 128;
  double dropout = 0.1;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  int batch_size = 16;
  int patience = 5;
  int max_enc_len = 597;
  int max_dec_len = 545;
  bool cross_attention = false;
  std::array<int, 5> enc_vocab{};  // filled from the vocabulary
  std::array<int, 2> dec_vocab{};

  int enc_fused_dim() const;
  int dec_fused_dim() const;
  /// Relative attention reaches back half the maximum decoder length.
  int rel_window() const { return max_dec_len / 2; }

  void set_vocab(const VocabPair& vocab);
  /// Throws ModelError on inconsistent sizes.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

ModelConfig paper_preset();
ModelConfig desk_preset();
/// "paper" or "desk"; anything else throws ModelError.
ModelConfig preset(const std::string& name);

nlohmann::ordered_json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

/// Decoder input/target split of a drum word stream: input = words[0..n-2], target = words[1..n-1].
struct TeacherForcing {
  std::vector<DecoderWord> inputs;
  std::vector<int> onset_targets;
  std::vector<int> drums_targets;
};
TeacherForcing teacher_forcing(const std::vector<DecoderWord>& words);

template <class S>
struct ForwardResult {
  Var z;              // 1 x model_dim
  Var hidden;         // L x model_dim, final-norm decoder states
  Var onset_logits;   // L x onset vocab
  Var drums_logits;   // L x drums vocab
};

template <class S>
class Model {
 public:
  explicit Model(const ModelConfig& config, std::uint64_t seed = 0);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  std::vector<Param<S>*> params();
  std::vector<const Param<S>*> params() const;
  std::size_t parameter_count() const;
  Param<S>& param(const std::string& name);
  void zero_grad();

  /// Fused, projected encoder input (L x model_dim). `concat` receives the pre-projection stage.
  Var embed_encoder(Tape<S>& t, const std::vector<EncoderWord>& words, Var* concat = nullptr);
  /// z and the top-layer states (L x 2 * hidden).
  std::pair<Var, Var> encode(Tape<S>& t, const std::vector<EncoderWord>& words, bool train, std::mt19937_64* rng);
  Var decode(Tape<S>& t, const std::vector<DecoderWord>& inputs, Var z, Var enc_states, bool train,
             std::mt19937_64* rng);

  ForwardResult<S> forward(Tape<S>& t, const std::vector<EncoderWord>& condition,
                           const std::vector<DecoderWord>& inputs, bool train, std::mt19937_64* rng);

  /// Summed CE of both heads over non-PAD targets; `count` receives the number of
  /// positions with a non-PAD onset target.
  Var loss_sum(Tape<S>& t, const ForwardResult<S>& f, const TeacherForcing& tf, int* count = nullptr);

 private:
  struct Block {
    Param<S> ln1_g, ln1_b, wq, wk, wv, wo, bo, rel, ln2_g, ln2_b, w1, b1, w2, b2;
    Param<S> lnx_g, lnx_b, xq, xk, xv, xo, xbo;  // cross-attention, when enabled
  };
  struct LstmLayer {
    Param<S> wx_f, wh_f, b_f, wx_b, wh_b, b_b;
  };

  Param<S>& add(Param<S>& p, const std::string& name, int rows, int cols, double init_scale, bool decay = true);

  ModelConfig config_;
  std::array<Param<S>, 5> enc_emb_;
  Param<S> enc_proj_w_, enc_proj_b_;
  std::vector<LstmLayer> lstm_;
  Param<S> z_w_, z_b_;
  std::array<Param<S>, 2> dec_emb_;
  Param<S> dec_proj_w_, dec_proj_b_;
  std::vector<Block> blocks_;
  Param<S> lnf_g_, lnf_b_, onset_w_, onset_b_, drums_w_, drums_b_;
  std::vector<Param<S>*> registry_;
  std::mt19937_64 init_rng_;
};

/// Sinusoidal position signal added to the decoder input (L x width).
template <class S>
Mat<S> position_signal(int length, int width);

/// Categorical draw from `dist` with logits log(dist) scaled by 1/tau. Throws on tau <= 0.
int sample(const std::vector<double>& dist, double tau, std::mt19937_64& rng);

/// Softmax of `logits / tau` restricted to `allowed` (others get probability 0).
std::vector<double> masked_distribution(const std::vector<double>& logits, const std::vector<bool>& allowed,
                                        double tau);

struct Temperature {
  bool uniform = false;  // draw tau from U(0.8, 1.2) once per generation
  double tau = 1.0;

  double resolve(std::mt19937_64& rng) const;
};

struct GenerateOptions {
  Temperature temperature;
  int max_len = 0;  // counts BOS and EOS; 0 or anything above max_dec_len means max_dec_len
};

struct GenerationResult {
  std::vector<DecoderWord> words;
  double tau = 1.0;
};

/// Autoregressive decoding from BOS. Onset is sampled first, then drums from the same
/// state. Masks keep the stream decodable: bars open with BAR, onsets stay inside the bar
/// and in canonical order. Stops at EOS, when a BAR would open a bar past the condition's
/// bar count (emitted as EOS), or at max_len.
template <class S>
GenerationResult generate(Model<S>& model, const std::vector<EncoderWord>& condition,
                          const std::vector<Bar>& bars, const Vocabulary& dec, const GenerateOptions& opts,
                          std::mt19937_64& rng);

}  // namespace cpdrums::nn
