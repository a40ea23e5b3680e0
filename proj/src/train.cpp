#include "cpdrums/train.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cpdrums::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

AdamW::AdamW(Model<float>& model, double lr, double weight_decay, double beta1, double beta2, double eps)
    : params_(model.params()), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.push_back(Mat<float>::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat<float>::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    m = static_cast<float>(b1_) * m + static_cast<float>(1.0 - b1_) * p.grad;
    v = static_cast<float>(b2_) * v + static_cast<float>(1.0 - b2_) * p.grad.cwiseProduct(p.grad);
    const float lr = static_cast<float>(lr_);
    const float decay = p.decay ? static_cast<float>(wd_) : 0.0f;
    p.value.array() -= lr * ((m.array() / static_cast<float>(c1)) /
                                 ((v.array() / static_cast<float>(c2)).sqrt() + static_cast<float>(eps_)) +
                             decay * p.value.array());
  }
}

double clip_gradients(Model<float>& model, double max_norm) {
  double sq = 0.0;
  for (auto* p : model.params()) sq += p->grad.template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto* p : model.params()) p->grad *= s;
  }
  return norm;
}

namespace {

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(a * 0x100000001b3ULL + splitmix64(b))));
}

}  // namespace

StepResult train_step(Model<float>& model, AdamW& opt, const std::vector<const TokenizedPhrase*>& batch,
                      std::uint64_t seed) {
  StepResult r;
  std::vector<TeacherForcing> tfs;
  for (const auto* p : batch) {
    tfs.push_back(teacher_forcing(p->drums));
    r.positions += static_cast<int>(std::count_if(tfs.back().onset_targets.begin(), tfs.back().onset_targets.end(),
                                                  [](int id) { return id != kPadId; }));
  }
  if (r.positions == 0) throw TrainingError("batch has no non-PAD targets");
  model.zero_grad();
  const float inv = 1.0f / static_cast<float>(r.positions);
  double total = 0.0;
  const auto step = static_cast<std::uint64_t>(opt.steps());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto rng = derived_rng(seed, step, i);
    Tape<float> t;
    const auto f = model.forward(t, batch[i]->condition, tfs[i].inputs, true, &rng);
    const Var loss = model.loss_sum(t, f, tfs[i]);
    total += t.value(loss)(0, 0);
    t.backward(loss, inv);
  }
  r.loss = total / r.positions;
  if (!std::isfinite(r.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << opt.steps() << " on phrases";
    for (const auto* p : batch) msg << ' ' << p->source_id;
    throw TrainingError(msg.str());
  }
  r.grad_norm = clip_gradients(model, model.config().clip_norm);
  opt.step();
  return r;
}

EvalResult evaluate(Model<float>& model, const std::vector<TokenizedPhrase>& phrases) {
  EvalResult r;
  double total = 0.0;
  long onset_ok = 0, onset_n = 0, drums_ok = 0, drums_n = 0;
  for (const auto& p : phrases) {
    const auto tf = teacher_forcing(p.drums);
    Tape<float> t;
    const auto f = model.forward(t, p.condition, tf.inputs, false, nullptr);
    int count = 0;
    total += t.value(model.loss_sum(t, f, tf, &count))(0, 0);
    r.positions += count;
    const auto& ol = t.value(f.onset_logits);
    const auto& dl = t.value(f.drums_logits);
    for (std::size_t i = 0; i < tf.onset_targets.size(); ++i) {
      Eigen::Index arg = 0;
      if (tf.onset_targets[i] != kPadId) {
        ol.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
        onset_ok += arg == tf.onset_targets[i];
        ++onset_n;
      }
      if (tf.drums_targets[i] != kPadId) {
        dl.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
        drums_ok += arg == tf.drums_targets[i];
        ++drums_n;
      }
    }
  }
  if (r.positions == 0) throw TrainingError("evaluation set has no non-PAD targets");
  r.loss = total / r.positions;
  r.onset_accuracy = onset_n ? static_cast<double>(onset_ok) / onset_n : 1.0;
  r.drums_accuracy = drums_n ? static_cast<double>(drums_ok) / drums_n : 1.0;
  return r;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

void put_bytes(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

void put_tensor(std::string& out, const std::string& name, const Mat<float>& m) {
  put_bytes(out, name);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float));
}

class Reader {
 public:
  Reader(const std::string& data, std::size_t pos, std::string path)
      : data_(data), path_(std::move(path)), pos_(pos) {}

  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  std::string bytes() {
    const auto n = u32();
    return {take(n), n};
  }
  void floats(float* dst, std::size_t n) { std::memcpy(dst, take(n * sizeof(float)), n * sizeof(float)); }
  bool done() const { return pos_ == data_.size(); }

 private:
  const char* take(std::size_t n) {
    if (n > data_.size() - pos_) throw TrainingError("checkpoint " + path_ + " is truncated");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  const std::string& data_;
  std::string path_;
  std::size_t pos_;
};

nlohmann::ordered_json state_to_json(const TrainState& s) {
  nlohmann::ordered_json j;
  j["step"] = s.step;
  j["epoch"] = s.epoch;
  j["next_batch"] = s.next_batch;
  j["best_valid"] = s.best_valid;
  j["best_epoch"] = s.best_epoch;
  j["bad_epochs"] = s.bad_epochs;
  j["seed"] = s.seed;
  j["finished"] = s.finished;
  return j;
}

TrainState state_from_json(const nlohmann::json& j) {
  TrainState s;
  s.step = j.at("step").get<std::int64_t>();
  s.epoch = j.at("epoch").get<int>();
  s.next_batch = j.at("next_batch").get<int>();
  s.best_valid = j.at("best_valid").get<double>();
  s.best_epoch = j.at("best_epoch").get<int>();
  s.bad_epochs = j.at("bad_epochs").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.finished = j.at("finished").get<bool>();
  return s;
}

void write_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw TrainingError("cannot write " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw TrainingError("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void save_checkpoint(const std::string& path, Model<float>& model, AdamW& opt, const TrainState& state,
                     const ArtifactStamp& stamp) {
  nlohmann::ordered_json header;
  header["config"] = config_to_json(model.config());
  header["state"] = state_to_json(state);
  header["stamp"] = {{"config_hash", stamp.config_hash}, {"seed", stamp.seed}};
  std::string out = "CPCK";
  put_u32(out, 1);
  put_bytes(out, header.dump());
  const auto params = model.params();
  put_u32(out, static_cast<std::uint32_t>(3 * params.size()));
  for (const auto* p : params) put_tensor(out, p->name, p->value);
  for (std::size_t i = 0; i < params.size(); ++i) put_tensor(out, "adam.m/" + params[i]->name, opt.m()[i]);
  for (std::size_t i = 0; i < params.size(); ++i) put_tensor(out, "adam.v/" + params[i]->name, opt.v()[i]);
  write_atomic(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TrainingError("cannot open checkpoint " + path);
  const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (data.size() < 8 || data.compare(0, 4, "CPCK") != 0) throw TrainingError(path + " is not a checkpoint");
  Reader r(data, 4, path);
  const auto version = r.u32();
  if (version != 1) throw TrainingError("unsupported checkpoint version " + std::to_string(version));
  const auto header = nlohmann::json::parse(r.bytes());
  Checkpoint c;
  c.config = config_from_json(header.at("config"));
  c.state = state_from_json(header.at("state"));
  c.stamp.config_hash = header.at("stamp").at("config_hash").get<std::string>();
  c.stamp.seed = header.at("stamp").at("seed").get<std::uint64_t>();
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto name = r.bytes();
    const auto rows = r.u32();
    const auto cols = r.u32();
    Mat<float> m(rows, cols);
    r.floats(m.data(), static_cast<std::size_t>(rows) * cols);
    c.tensors.emplace(name, std::move(m));
  }
  if (!r.done()) throw TrainingError("checkpoint " + path + " has trailing bytes");
  return c;
}

void restore(const Checkpoint& ckpt, Model<float>& model, AdamW* opt) {
  if (!(ckpt.config == model.config())) throw TrainingError("checkpoint config differs from the model config");
  const auto params = model.params();
  auto fetch = [&ckpt](const std::string& name, const Mat<float>& like) -> const Mat<float>& {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw TrainingError("checkpoint lacks tensor " + name);
    if (it->second.rows() != like.rows() || it->second.cols() != like.cols()) {
      throw TrainingError("checkpoint tensor " + name + " has the wrong shape");
    }
    return it->second;
  };
  for (auto* p : params) p->value = fetch(p->name, p->value);
  if (opt) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      opt->m()[i] = fetch("adam.m/" + params[i]->name, params[i]->value);
      opt->v()[i] = fetch("adam.v/" + params[i]->name, params[i]->value);
    }
    opt->set_steps(ckpt.state.step);
  }
}

// ---- training loop ---------------------------------------------------------

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = derived_rng(seed, 0xE90C4ULL, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void append_log(const std::string& path, const nlohmann::ordered_json& j) {
  std::ofstream f(path, std::ios::app);
  if (!f) throw TrainingError("cannot append to " + path);
  f << j.dump() << '\n';
}

}  // namespace

TrainSummary train(Model<float>& model, const std::vector<TokenizedPhrase>& train_set,
                   const std::vector<TokenizedPhrase>& valid_set, std::uint64_t seed, const TrainOptions& opts) {
  if (train_set.empty()) throw TrainingError("training set is empty");
  namespace fs = std::filesystem;
  fs::create_directories(opts.out_dir);
  const std::string last_path = (fs::path(opts.out_dir) / "last.ckpt").string();
  const std::string best_path = (fs::path(opts.out_dir) / "best.ckpt").string();
  const std::string log_path = (fs::path(opts.out_dir) / "train_log.jsonl").string();
  const auto& cfg = model.config();

  AdamW opt(model, cfg.lr, cfg.weight_decay);
  TrainSummary summary;
  auto& st = summary.state;
  st.seed = seed;
  if (opts.resume && fs::exists(last_path)) {
    const auto ckpt = load_checkpoint(last_path);
    if (ckpt.state.seed != seed) throw TrainingError("checkpoint was trained with a different seed");
    restore(ckpt, model, &opt);
    st = ckpt.state;
  }
  if (fs::exists(best_path)) summary.best_checkpoint = best_path;

  const int batch = cfg.batch_size;
  const int batches = static_cast<int>((train_set.size() + static_cast<std::size_t>(batch) - 1) / batch);
  bool stop = st.finished;
  while (!stop && st.epoch < opts.max_epochs) {
    const auto order = epoch_order(train_set.size(), seed, st.epoch);
    while (st.next_batch < batches) {
      if (opts.max_steps > 0 && st.step >= opts.max_steps) {
        stop = true;
        break;
      }
      std::vector<const TokenizedPhrase*> b;
      for (int i = st.next_batch * batch; i < std::min<int>((st.next_batch + 1) * batch, train_set.size()); ++i) {
        b.push_back(&train_set[order[static_cast<std::size_t>(i)]]);
      }
      const auto r = train_step(model, opt, b, seed);
      ++st.step;
      ++st.next_batch;
      summary.step_losses.push_back(r.loss);
      append_log(log_path, {{"kind", "step"}, {"step", st.step}, {"epoch", st.epoch}, {"loss", r.loss},
                            {"lr", cfg.lr}, {"grad_norm", r.grad_norm}, {"seed", seed}});
      if (opts.on_step && opts.on_step(st, r)) {
        stop = true;
        break;
      }
    }
    if (st.next_batch < batches) break;  // interrupted mid-epoch

    nlohmann::ordered_json entry = {{"kind", "epoch"}, {"epoch", st.epoch}, {"step", st.step}, {"seed", seed}};
    bool improved = false;
    if (!valid_set.empty()) {
      const auto ev = evaluate(model, valid_set);
      summary.valid.push_back(ev);
      entry["valid_loss"] = ev.loss;
      entry["onset_accuracy"] = ev.onset_accuracy;
      entry["drums_accuracy"] = ev.drums_accuracy;
      if (st.best_epoch < 0 || ev.loss < st.best_valid) {
        st.best_valid = ev.loss;
        st.best_epoch = st.epoch;
        st.bad_epochs = 0;
        improved = true;
      } else if (++st.bad_epochs >= cfg.patience) {
        st.finished = true;
        summary.early_stopped = true;
      }
    }
    entry["best_epoch"] = st.best_epoch;
    append_log(log_path, entry);
    const int done = st.epoch;
    ++st.epoch;
    st.next_batch = 0;
    if (st.epoch >= opts.max_epochs) st.finished = true;
    const auto epoch_path = (fs::path(opts.out_dir) / ("epoch-" + std::to_string(done) + ".ckpt")).string();
    save_checkpoint(epoch_path, model, opt, st, opts.stamp);
    save_checkpoint(last_path, model, opt, st, opts.stamp);
    if (improved) {
      fs::copy_file(epoch_path, best_path, fs::copy_options::overwrite_existing);
      summary.best_checkpoint = best_path;
    }
    stop = stop || st.finished;
  }
  save_checkpoint(last_path, model, opt, st, opts.stamp);
  return summary;
}

}  // namespace cpdrums::nn
