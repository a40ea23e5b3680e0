#include "cpdrums/model.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cpdrums/metrics.h"

namespace cpdrums::nn {

int ModelConfig::enc_fused_dim() const { return std::accumulate(enc_emb_sizes.begin(), enc_emb_sizes.end(), 0); }
int ModelConfig::dec_fused_dim() const { return std::accumulate(dec_emb_sizes.begin(), dec_emb_sizes.end(), 0); }

void ModelConfig::set_vocab(const VocabPair& vocab) {
  const auto e = vocab.encoder.sizes();
  const auto d = vocab.decoder.sizes();
  if (e.size() != 5 || d.size() != 2) throw ModelError("vocabulary has the wrong number of dimensions");
  std::copy(e.begin(), e.end(), enc_vocab.begin());
  std::copy(d.begin(), d.end(), dec_vocab.begin());
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw ModelError(std::string("model config: ") + what + " must be positive");
  };
  for (int s : enc_emb_sizes) positive(s, "enc_emb_sizes");
  for (int s : dec_emb_sizes) positive(s, "dec_emb_sizes");
  for (int s : enc_vocab) positive(s, "enc_vocab");
  for (int s : dec_vocab) positive(s, "dec_vocab");
  positive(model_dim, "model_dim");
  positive(bilstm_layers, "bilstm_layers");
  positive(bilstm_hidden, "bilstm_hidden");
  positive(dec_layers, "dec_layers");
  positive(heads, "heads");
  positive(ffn_dim, "ffn_dim");
  positive(batch_size, "batch_size");
  positive(max_enc_len, "max_enc_len");
  if (max_dec_len < 2) throw ModelError("model config: max_dec_len must be at least 2");
  if (model_dim % heads != 0) throw ModelError("model config: model_dim must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0) throw ModelError("model config: dropout must lie in [0, 1)");
  if (lr < 0.0 || weight_decay < 0.0) throw ModelError("model config: lr and weight_decay must be non-negative");
}

ModelConfig paper_preset() {
  ModelConfig c;
  c.preset = "paper";
  c.enc_emb_sizes = {64, 16, 32, 64, 64};
  c.dec_emb_sizes = {96, 96};
  c.model_dim = 512;
  c.bilstm_layers = 3;
  c.bilstm_hidden = 512;
  c.dec_layers = 4;
  c.heads = 8;
  c.ffn_dim = 1024;
  c.dropout = 0.3;
  c.lr = 2e-5;
  c.weight_decay = 0.01;
  return c;
}

ModelConfig desk_preset() { return ModelConfig{}; }

ModelConfig preset(const std::string& name) {
  if (name == "paper") return paper_preset();
  if (name == "desk") return desk_preset();
  throw ModelError("unknown preset '" + name + "' (expected paper or desk)");
}

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["preset"] = c.preset;
  j["enc_emb_sizes"] = c.enc_emb_sizes;
  j["dec_emb_sizes"] = c.dec_emb_sizes;
  j["model_dim"] = c.model_dim;
  j["bilstm_layers"] = c.bilstm_layers;
  j["bilstm_hidden"] = c.bilstm_hidden;
  j["dec_layers"] = c.dec_layers;
  j["heads"] = c.heads;
  j["ffn_dim"] = c.ffn_dim;
  j["dropout"] = c.dropout;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["clip_norm"] = c.clip_norm;
  j["batch_size"] = c.batch_size;
  j["patience"] = c.patience;
  j["max_enc_len"] = c.max_enc_len;
  j["max_dec_len"] = c.max_dec_len;
  j["cross_attention"] = c.cross_attention;
  j["enc_vocab"] = c.enc_vocab;
  j["dec_vocab"] = c.dec_vocab;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c = preset(j.value("preset", std::string("desk")));
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("enc_emb_sizes", c.enc_emb_sizes);
  get("dec_emb_sizes", c.dec_emb_sizes);
  get("model_dim", c.model_dim);
  get("bilstm_layers", c.bilstm_layers);
  get("bilstm_hidden", c.bilstm_hidden);
  get("dec_layers", c.dec_layers);
  get("heads", c.heads);
  get("ffn_dim", c.ffn_dim);
  get("dropout", c.dropout);
  get("lr", c.lr);
  get("weight_decay", c.weight_decay);
  get("clip_norm", c.clip_norm);
  get("batch_size", c.batch_size);
  get("patience", c.patience);
  get("max_enc_len", c.max_enc_len);
  get("max_dec_len", c.max_dec_len);
  get("cross_attention", c.cross_attention);
  get("enc_vocab", c.enc_vocab);
  get("dec_vocab", c.dec_vocab);
  return c;
}

TeacherForcing teacher_forcing(const std::vector<DecoderWord>& words) {
  if (words.size() < 2) throw ModelError("decoder stream needs at least two words for teacher forcing");
  TeacherForcing tf;
  tf.inputs.assign(words.begin(), words.end() - 1);
  for (std::size_t i = 1; i < words.size(); ++i) {
    tf.onset_targets.push_back(words[i].onset);
    tf.drums_targets.push_back(words[i].drums);
  }
  return tf;
}

template <class S>
Mat<S> position_signal(int length, int width) {
  Mat<S> p(length, width);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / width);
      p(pos, i) = static_cast<S>(i % 2 == 0 ? std::sin(pos * rate) : std::cos(pos * rate));
    }
  }
  return p;
}

template <class S>
Param<S>& Model<S>::add(Param<S>& p, const std::string& name, int rows, int cols, double init_scale, bool decay) {
  p.name = name;
  p.decay = decay;
  p.value.resize(rows, cols);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    p.value.data()[i] = static_cast<S>((2.0 * uniform01(init_rng_) - 1.0) * init_scale);
  }
  p.zero_grad();
  registry_.push_back(&p);
  return p;
}

template <class S>
Model<S>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config), init_rng_(seed) {
  config_.validate();
  const auto& c = config_;
  const int D = c.model_dim, H = c.bilstm_hidden;
  auto xavier = [](int fan_in, int fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); };
  auto ones = [](Param<S>& p) { p.value.setOnes(); };

  for (int d = 0; d < 5; ++d) {
    add(enc_emb_[d], "enc.emb" + std::to_string(d), c.enc_vocab[d], c.enc_emb_sizes[d], 0.1);
  }
  add(enc_proj_w_, "enc.proj.w", c.enc_fused_dim(), D, xavier(c.enc_fused_dim(), D));
  add(enc_proj_b_, "enc.proj.b", 1, D, 0.0, false);
  lstm_.resize(static_cast<std::size_t>(c.bilstm_layers));
  for (int l = 0; l < c.bilstm_layers; ++l) {
    auto& layer = lstm_[static_cast<std::size_t>(l)];
    const int in = l == 0 ? D : 2 * H;
    const std::string p = "enc.lstm" + std::to_string(l) + ".";
    for (const char* dir : {"f", "b"}) {
      const bool fwd = std::string(dir) == "f";
      add(fwd ? layer.wx_f : layer.wx_b, p + dir + ".wx", in, 4 * H, xavier(in, 4 * H));
      add(fwd ? layer.wh_f : layer.wh_b, p + dir + ".wh", H, 4 * H, xavier(H, 4 * H));
      auto& b = add(fwd ? layer.b_f : layer.b_b, p + dir + ".b", 1, 4 * H, 0.0, false);
      b.value.middleCols(H, H).setOnes();  // forget gate starts open
    }
  }
  add(z_w_, "enc.z.w", 2 * H, D, xavier(2 * H, D));
  add(z_b_, "enc.z.b", 1, D, 0.0, false);

  for (int d = 0; d < 2; ++d) {
    add(dec_emb_[d], "dec.emb" + std::to_string(d), c.dec_vocab[d], c.dec_emb_sizes[d], 0.1);
  }
  add(dec_proj_w_, "dec.proj.w", c.dec_fused_dim() + D, D, xavier(c.dec_fused_dim() + D, D));
  add(dec_proj_b_, "dec.proj.b", 1, D, 0.0, false);
  const int dh = D / c.heads;
  blocks_.resize(static_cast<std::size_t>(c.dec_layers));
  for (int l = 0; l < c.dec_layers; ++l) {
    auto& b = blocks_[static_cast<std::size_t>(l)];
    const std::string p = "dec.block" + std::to_string(l) + ".";
    ones(add(b.ln1_g, p + "ln1.g", 1, D, 0.0, false));
    add(b.ln1_b, p + "ln1.b", 1, D, 0.0, false);
    add(b.wq, p + "attn.wq", D, D, xavier(D, D));
    add(b.wk, p + "attn.wk", D, D, xavier(D, D));
    add(b.wv, p + "attn.wv", D, D, xavier(D, D));
    add(b.wo, p + "attn.wo", D, D, xavier(D, D));
    add(b.bo, p + "attn.bo", 1, D, 0.0, false);
    add(b.rel, p + "attn.rel", c.heads * (c.rel_window() + 1), dh, 0.1);
    if (c.cross_attention) {
      ones(add(b.lnx_g, p + "lnx.g", 1, D, 0.0, false));
      add(b.lnx_b, p + "lnx.b", 1, D, 0.0, false);
      add(b.xq, p + "xattn.wq", D, D, xavier(D, D));
      add(b.xk, p + "xattn.wk", 2 * H, D, xavier(2 * H, D));
      add(b.xv, p + "xattn.wv", 2 * H, D, xavier(2 * H, D));
      add(b.xo, p + "xattn.wo", D, D, xavier(D, D));
      add(b.xbo, p + "xattn.bo", 1, D, 0.0, false);
    }
    ones(add(b.ln2_g, p + "ln2.g", 1, D, 0.0, false));
    add(b.ln2_b, p + "ln2.b", 1, D, 0.0, false);
    add(b.w1, p + "ffn.w1", D, c.ffn_dim, xavier(D, c.ffn_dim));
    add(b.b1, p + "ffn.b1", 1, c.ffn_dim, 0.0, false);
    add(b.w2, p + "ffn.w2", c.ffn_dim, D, xavier(c.ffn_dim, D));
    add(b.b2, p + "ffn.b2", 1, D, 0.0, false);
  }
  ones(add(lnf_g_, "dec.lnf.g", 1, D, 0.0, false));
  add(lnf_b_, "dec.lnf.b", 1, D, 0.0, false);
  add(onset_w_, "head.onset.w", D, c.dec_vocab[0], xavier(D, c.dec_vocab[0]));
  add(onset_b_, "head.onset.b", 1, c.dec_vocab[0], 0.0, false);
  add(drums_w_, "head.drums.w", D, c.dec_vocab[1], xavier(D, c.dec_vocab[1]));
  add(drums_b_, "head.drums.b", 1, c.dec_vocab[1], 0.0, false);
}

template <class S>
std::vector<Param<S>*> Model<S>::params() {
  return registry_;
}

template <class S>
std::vector<const Param<S>*> Model<S>::params() const {
  return {registry_.begin(), registry_.end()};
}

template <class S>
std::size_t Model<S>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : registry_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

template <class S>
Param<S>& Model<S>::param(const std::string& name) {
  for (auto* p : registry_) {
    if (p->name == name) return *p;
  }
  throw ModelError("no parameter named '" + name + "'");
}

template <class S>
void Model<S>::zero_grad() {
  for (auto* p : registry_) p->zero_grad();
}

template <class S>
Var Model<S>::embed_encoder(Tape<S>& t, const std::vector<EncoderWord>& words, Var* concat) {
  std::vector<Var> parts;
  for (int d = 0; d < 5; ++d) {
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(w.ids()[static_cast<std::size_t>(d)]);
    parts.push_back(embed(t, t.param(enc_emb_[d]), ids));
  }
  const Var fused = concat_cols(t, parts);
  if (concat) *concat = fused;
  return linear(t, fused, t.param(enc_proj_w_), t.param(enc_proj_b_));
}

template <class S>
std::pair<Var, Var> Model<S>::encode(Tape<S>& t, const std::vector<EncoderWord>& words, bool train,
                                     std::mt19937_64* rng) {
  if (words.empty()) throw ModelError("encoder input is empty");
  if (static_cast<int>(words.size()) > config_.max_enc_len) {
    throw ModelError("encoder input of " + std::to_string(words.size()) + " words exceeds max_enc_len " +
                     std::to_string(config_.max_enc_len));
  }
  Var x = embed_encoder(t, words);
  if (train && rng) x = dropout(t, x, config_.dropout, *rng);
  Var fwd, bwd;
  for (auto& layer : lstm_) {
    fwd = lstm(t, linear(t, x, t.param(layer.wx_f), t.param(layer.b_f)), t.param(layer.wh_f), false);
    bwd = lstm(t, linear(t, x, t.param(layer.wx_b), t.param(layer.b_b)), t.param(layer.wh_b), true);
    x = concat_cols(t, {fwd, bwd});
  }
  const int last = static_cast<int>(words.size()) - 1;
  const Var final_states = concat_cols(t, {take_row(t, fwd, last), take_row(t, bwd, 0)});
  const Var z = linear(t, final_states, t.param(z_w_), t.param(z_b_));
  return {z, x};
}

template <class S>
Var Model<S>::decode(Tape<S>& t, const std::vector<DecoderWord>& inputs, Var z, Var enc_states, bool train,
                     std::mt19937_64* rng) {
  if (!z.valid()) throw ModelError("decoder needs the encoder latent z");
  if (inputs.empty()) throw ModelError("decoder input is empty");
  if (static_cast<int>(inputs.size()) > config_.max_dec_len) {
    throw ModelError("decoder input of " + std::to_string(inputs.size()) + " words exceeds max_dec_len " +
                     std::to_string(config_.max_dec_len));
  }
  if (config_.cross_attention && !enc_states.valid()) throw ModelError("cross-attention needs encoder states");
  const int L = static_cast<int>(inputs.size());
  const bool drop = train && rng && config_.dropout > 0.0;
  std::vector<int> onset_ids, drums_ids;
  for (const auto& w : inputs) {
    onset_ids.push_back(w.onset);
    drums_ids.push_back(w.drums);
  }
  const Var fused = concat_cols(t, {embed(t, t.param(dec_emb_[0]), onset_ids), embed(t, t.param(dec_emb_[1]), drums_ids),
                                    repeat_rows(t, z, L)});
  Var x = linear(t, fused, t.param(dec_proj_w_), t.param(dec_proj_b_));
  x = nn::add(t, x, t.constant(position_signal<S>(L, config_.model_dim)));
  if (drop) x = dropout(t, x, config_.dropout, *rng);

  const AttentionSpec self_spec{config_.heads, true, config_.rel_window()};
  const AttentionSpec cross_spec{config_.heads, false, 0};
  for (auto& b : blocks_) {
    Var a = layer_norm(t, x, t.param(b.ln1_g), t.param(b.ln1_b));
    Var att = attention(t, matmul(t, a, t.param(b.wq)), matmul(t, a, t.param(b.wk)), matmul(t, a, t.param(b.wv)),
                        t.param(b.rel), self_spec);
    Var o = linear(t, att, t.param(b.wo), t.param(b.bo));
    if (drop) o = dropout(t, o, config_.dropout, *rng);
    x = nn::add(t, x, o);
    if (config_.cross_attention) {
      a = layer_norm(t, x, t.param(b.lnx_g), t.param(b.lnx_b));
      att = attention(t, matmul(t, a, t.param(b.xq)), matmul(t, enc_states, t.param(b.xk)),
                      matmul(t, enc_states, t.param(b.xv)), Var{}, cross_spec);
      o = linear(t, att, t.param(b.xo), t.param(b.xbo));
      if (drop) o = dropout(t, o, config_.dropout, *rng);
      x = nn::add(t, x, o);
    }
    a = layer_norm(t, x, t.param(b.ln2_g), t.param(b.ln2_b));
    Var f = linear(t, gelu(t, linear(t, a, t.param(b.w1), t.param(b.b1))), t.param(b.w2), t.param(b.b2));
    if (drop) f = dropout(t, f, config_.dropout, *rng);
    x = nn::add(t, x, f);
  }
  return layer_norm(t, x, t.param(lnf_g_), t.param(lnf_b_));
}

template <class S>
ForwardResult<S> Model<S>::forward(Tape<S>& t, const std::vector<EncoderWord>& condition,
                                   const std::vector<DecoderWord>& inputs, bool train, std::mt19937_64* rng) {
  ForwardResult<S> r;
  auto [z, states] = encode(t, condition, train, rng);
  r.z = z;
  r.hidden = decode(t, inputs, z, states, train, rng);
  r.onset_logits = linear(t, r.hidden, t.param(onset_w_), t.param(onset_b_));
  r.drums_logits = linear(t, r.hidden, t.param(drums_w_), t.param(drums_b_));
  return r;
}

template <class S>
Var Model<S>::loss_sum(Tape<S>& t, const ForwardResult<S>& f, const TeacherForcing& tf, int* count) {
  if (count) {
    *count = static_cast<int>(std::count_if(tf.onset_targets.begin(), tf.onset_targets.end(),
                                            [](int id) { return id != kPadId; }));
  }
  return nn::add(t, cross_entropy(t, f.onset_logits, tf.onset_targets, kPadId),
             cross_entropy(t, f.drums_logits, tf.drums_targets, kPadId));
}

std::vector<double> masked_distribution(const std::vector<double>& logits, const std::vector<bool>& allowed,
                                        double tau) {
  if (!(tau > 0.0)) throw ModelError("temperature must be positive");
  if (allowed.size() != logits.size()) throw ModelError("mask and logits differ in size");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (allowed[i]) mx = std::max(mx, logits[i] / tau);
  }
  if (!std::isfinite(mx)) throw ModelError("no token is allowed");
  std::vector<double> p(logits.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!allowed[i]) continue;
    p[i] = std::exp(logits[i] / tau - mx);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

namespace {

int categorical(const std::vector<double>& p, std::mt19937_64& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    acc += p[i];
    last = static_cast<int>(i);
    if (u < acc) return last;
  }
  return last;
}

}  // namespace

int sample(const std::vector<double>& dist, double tau, std::mt19937_64& rng) {
  std::vector<double> logits(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] < 0.0) throw ModelError("distribution has a negative entry");
    logits[i] = dist[i] > 0.0 ? std::log(dist[i]) : -std::numeric_limits<double>::infinity();
  }
  std::vector<bool> allowed(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) allowed[i] = dist[i] > 0.0;
  return categorical(masked_distribution(logits, allowed, tau), rng);
}

double Temperature::resolve(std::mt19937_64& rng) const {
  if (uniform) return 0.8 + 0.4 * uniform01(rng);
  if (!(tau > 0.0)) throw ModelError("temperature must be positive");
  return tau;
}

template <class S>
GenerationResult generate(Model<S>& model, const std::vector<EncoderWord>& condition, const std::vector<Bar>& bars,
                          const Vocabulary& dec, const GenerateOptions& opts, std::mt19937_64& rng) {
  if (bars.empty()) throw ModelError("generation needs at least one bar of context");
  const DecoderSpecials sp(dec);
  const int grid = dec.options.grid;
  const int max_len =
      opts.max_len > 0 ? std::min(opts.max_len, model.config().max_dec_len) : model.config().max_dec_len;
  if (max_len < 2) throw ModelError("max_len must leave room for BOS and EOS");

  GenerationResult out;
  out.tau = opts.temperature.resolve(rng);
  Mat<S> z_value, states_value;
  {
    Tape<S> t;
    auto [z, states] = model.encode(t, condition, false, nullptr);
    z_value = t.value(z);
    states_value = t.value(states);
  }
  auto& words = out.words;
  words.push_back(sp.bos());
  const int n_bars = static_cast<int>(bars.size());
  const int onset_vocab = dec.dim(dec_dim::kOnset).size();
  const int drums_vocab = dec.dim(dec_dim::kDrums).size();
  int bars_open = 0, bar_len = 0, last_step = -1, last_comp = -1;
  while (true) {
    if (static_cast<int>(words.size()) + 1 >= max_len) {
      words.push_back(sp.eos());
      break;
    }
    Tape<S> t;
    const Var z = t.constant(z_value);
    const Var states = t.constant(states_value);
    const Var h = model.decode(t, words, z, states, false, nullptr);
    const Var last = take_row(t, h, static_cast<int>(words.size()) - 1);
    // heads share the final state; only the newest row is needed
    auto row_logits = [&](const std::string& w, const std::string& b) {
      const Mat<S> l = t.value(last) * model.param(w).value + model.param(b).value;
      return std::vector<double>(l.data(), l.data() + l.size());
    };
    const auto onset_logits = row_logits("head.onset.w", "head.onset.b");

    std::vector<bool> allowed(static_cast<std::size_t>(onset_vocab), false);
    allowed[static_cast<std::size_t>(sp.onset_bar)] = true;
    if (bars_open == n_bars) allowed[static_cast<std::size_t>(sp.onset_eos)] = true;
    if (bars_open > 0) {
      for (int s = std::max(last_step, 0); s < std::min(bar_len, sp.num_positions); ++s) {
        if (s == last_step && last_comp >= kNumDrumComponents - 1) continue;
        allowed[static_cast<std::size_t>(sp.first_position + s)] = true;
      }
    }
    const int onset = categorical(masked_distribution(onset_logits, allowed, out.tau), rng);
    if (onset == sp.onset_eos || (onset == sp.onset_bar && bars_open == n_bars)) {
      words.push_back(sp.eos());
      break;
    }
    if (onset == sp.onset_bar) {
      words.push_back(sp.bar());
      bar_len = bar_steps(bars[static_cast<std::size_t>(bars_open)].ts, grid);
      ++bars_open;
      last_step = -1;
      last_comp = -1;
      continue;
    }
    const int step = onset - sp.first_position;
    const auto drums_logits = row_logits("head.drums.w", "head.drums.b");
    std::vector<bool> comps(static_cast<std::size_t>(drums_vocab), false);
    for (int c = 0; c < kNumDrumComponents; ++c) {
      if (step > last_step || c > last_comp) comps[static_cast<std::size_t>(sp.first_component + c)] = true;
    }
    const int drums = categorical(masked_distribution(drums_logits, comps, out.tau), rng);
    words.push_back({onset, drums});
    last_step = step;
    last_comp = drums - sp.first_component;
  }
  return out;
}

template class Model<float>;
template class Model<double>;
template Mat<float> position_signal<float>(int, int);
template Mat<double> position_signal<double>(int, int);
template GenerationResult generate(Model<float>&, const std::vector<EncoderWord>&, const std::vector<Bar>&,
                                   const Vocabulary&, const GenerateOptions&, std::mt19937_64&);
template GenerationResult generate(Model<double>&, const std::vector<EncoderWord>&, const std::vector<Bar>&,
                                   const Vocabulary&, const GenerateOptions&, std::mt19937_64&);

}  // namespace cpdrums::nn
