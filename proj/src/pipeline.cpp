#include "cpdrums/pipeline.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "cpdrums/codec.h"
#include "cpdrums/token_dataset.h"
#include "cpdrums/train.h"

namespace cpdrums {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr std::array<const char*, 3> kSplits = {"train", "valid", "test"};

TimeSignature parse_ts_text(const std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) throw PipelineError("config", "bad time signature '" + s + "'");
  return {std::stoi(s.substr(0, slash)), std::stoi(s.substr(slash + 1))};
}

const char* groove_mode_name(GrooveMode m) {
  switch (m) {
    case GrooveMode::Drums:
      return "drums";
    case GrooveMode::Union:
      return "union";
    case GrooveMode::PerTrack:
      return "per_track";
  }
  return "union";
}

GrooveMode groove_mode_from(const std::string& s) {
  if (s == "drums") return GrooveMode::Drums;
  if (s == "union") return GrooveMode::Union;
  if (s == "per_track") return GrooveMode::PerTrack;
  throw PipelineError("config", "unknown groove mode '" + s + "'");
}

ordered_json filter_json(const CorpusFilterConfig& f) {
  auto ts = ordered_json::array();
  for (const auto& t : f.allowed_ts) ts.push_back(to_string(t));
  return {{"allowed_ts", ts},
          {"min_bpm", to_string(f.min_bpm)},
          {"max_bpm", to_string(f.max_bpm)},
          {"min_phrase_bars", f.min_phrase_bars}};
}

ordered_json codec_json(const CodecOptions& c) {
  return {{"grid", c.grid}, {"tempo_bin_width", c.tempo_bin_width}, {"highlevel_every_bar", c.emit_highlevel_every_bar}};
}

ordered_json temperature_json(const nn::Temperature& t) {
  if (t.uniform) return "uniform";
  return t.tau;
}

void write_json(const fs::path& path, const ordered_json& j) {
  fs::create_directories(path.parent_path());
  write_text_file(path.string(), j.dump(2) + "\n");
}

void check_stamp(const std::string& stage, const std::string& what, const ArtifactStamp& got,
                 const ArtifactStamp& want) {
  if (got.config_hash != want.config_hash) {
    throw PipelineError(stage, what + " has config hash " + got.config_hash + ", expected " + want.config_hash +
                                   "; rerun the earlier stages with this config");
  }
  if (got.seed != want.seed) {
    throw PipelineError(stage, what + " was written with seed " + std::to_string(got.seed) + ", expected " +
                                   std::to_string(want.seed));
  }
}

fs::path phrase_path(const RunConfig& cfg, const char* split) {
  return cfg.work_dir / "phrases" / (std::string(split) + ".jsonl");
}
fs::path token_path(const RunConfig& cfg, const char* split) {
  return cfg.work_dir / "tokens" / (std::string(split) + ".cptk");
}

PhraseStore load_store(const RunConfig& cfg, const std::string& stage, const char* split) {
  const auto path = phrase_path(cfg, split);
  if (!fs::exists(path)) throw PipelineError(stage, "missing " + path.string() + "; run preprocess first");
  auto store = read_phrase_store(path.string());
  check_stamp(stage, path.string(), store.stamp, {cfg.data_hash(), cfg.seed});
  return store;
}

VocabPair load_vocab(const RunConfig& cfg, const std::string& stage) {
  const auto path = cfg.work_dir / "vocab.json";
  if (!fs::exists(path)) throw PipelineError(stage, "missing " + path.string() + "; run vocab first");
  auto v = parse_vocab_pair(read_text_file(path.string()));
  check_stamp(stage, path.string(), v.encoder.stamp, {cfg.data_hash(), cfg.seed});
  return v;
}

TokenDataset load_tokens(const RunConfig& cfg, const std::string& stage, const char* split) {
  const auto path = token_path(cfg, split);
  if (!fs::exists(path)) throw PipelineError(stage, "missing " + path.string() + "; run tokenize first");
  auto ds = read_token_dataset(path.string());
  check_stamp(stage, path.string(), ds.stamp, {cfg.data_hash(), cfg.seed});
  return ds;
}

std::vector<fs::path> files_with_suffix(const fs::path& dir, const std::string& suffix) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

ordered_json metric_json(const MetricVector& m) {
  ordered_json j;
  const auto v = m.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    j[kFeatureNames[i]] = {{"exact", to_string(v[i])}, {"value", to_double(v[i])}};
  }
  return j;
}

ordered_json density_json(const DensityReport& d) {
  return {{"empty_bars_pct", to_double(d.empty_bars_pct)},
          {"kick_snares", to_double(d.kick_snares)},
          {"hh_rides", to_double(d.hh_rides)},
          {"toms", to_double(d.toms)},
          {"cymbals", to_double(d.cymbals)}};
}

}  // namespace

// ---- config ----------------------------------------------------------------

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["filter"] = filter_json(filter);
  j["codec"] = codec_json(codec);
  j["split"] = split;
  j["model"] = nn::config_to_json(model);
  j["train"] = {{"max_epochs", max_epochs}, {"max_steps", max_steps}};
  j["generate"] = {{"tau", temperature_json(temperature)}, {"limit", generate_limit}};
  j["metrics"] = {{"grid", metrics.grid},
                  {"pattern_resolution", metrics.pattern_resolution},
                  {"groove_mode", groove_mode_name(metrics.groove_mode)}};
  return j;
}

std::string RunConfig::data_hash() const {
  const ordered_json j = {{"filter", filter_json(filter)}, {"codec", codec_json(codec)}, {"split", split}};
  return fnv1a_hex(j.dump());
}

std::string RunConfig::run_hash() const { return fnv1a_hex(to_json().dump()); }

nn::Temperature parse_temperature(const std::string& text) {
  nn::Temperature t;
  if (text == "uniform") {
    t.uniform = true;
    return t;
  }
  std::size_t used = 0;
  try {
    t.tau = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || !(t.tau > 0.0)) {
    throw PipelineError("config", "tau must be a positive number or 'uniform', got '" + text + "'");
  }
  return t;
}

RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base, const ConfigOverrides& overrides) {
  RunConfig c;
  try {
    auto path_of = [&](const char* key) {
      if (!j.contains(key)) throw PipelineError("config", std::string("missing '") + key + "'");
      fs::path p = j.at(key).get<std::string>();
      return (p.is_absolute() ? p : base / p).lexically_normal();
    };
    c.corpus_dir = path_of("corpus_dir");
    c.work_dir = path_of("work_dir");
    c.seed = j.value("seed", std::uint64_t{1});
    if (j.contains("filter")) {
      const auto& f = j.at("filter");
      if (f.contains("allowed_ts")) {
        c.filter.allowed_ts.clear();
        for (const auto& t : f.at("allowed_ts")) c.filter.allowed_ts.insert(parse_ts_text(t.get<std::string>()));
      }
      if (f.contains("min_bpm")) c.filter.min_bpm = parse_rational(f.at("min_bpm").get<std::string>());
      if (f.contains("max_bpm")) c.filter.max_bpm = parse_rational(f.at("max_bpm").get<std::string>());
      c.filter.min_phrase_bars = f.value("min_phrase_bars", c.filter.min_phrase_bars);
    }
    c.filter.validate();
    if (j.contains("codec")) {
      const auto& k = j.at("codec");
      c.codec.grid = k.value("grid", c.codec.grid);
      c.codec.tempo_bin_width = k.value("tempo_bin_width", c.codec.tempo_bin_width);
      c.codec.emit_highlevel_every_bar = k.value("highlevel_every_bar", c.codec.emit_highlevel_every_bar);
    }
    if (j.contains("split")) j.at("split").get_to(c.split);
    nlohmann::json model = j.value("model", nlohmann::json::object());
    if (overrides.preset) model["preset"] = *overrides.preset;
    c.model = nn::config_from_json(model);
    c.model.enc_vocab = {};
    c.model.dec_vocab = {};
    if (j.contains("train")) {
      c.max_epochs = j.at("train").value("max_epochs", c.max_epochs);
      c.max_steps = j.at("train").value("max_steps", c.max_steps);
    }
    if (j.contains("generate")) {
      const auto& g = j.at("generate");
      if (g.contains("tau")) {
        if (g.at("tau").is_string()) {
          c.temperature = parse_temperature(g.at("tau").get<std::string>());
        } else {
          c.temperature = {false, g.at("tau").get<double>()};
          if (!(c.temperature.tau > 0.0)) throw PipelineError("config", "tau must be positive");
        }
      }
      c.generate_limit = g.value("limit", c.generate_limit);
    }
    if (j.contains("metrics")) {
      const auto& m = j.at("metrics");
      c.metrics.grid = m.value("grid", c.codec.grid);
      c.metrics.pattern_resolution = m.value("pattern_resolution", c.metrics.pattern_resolution);
      if (m.contains("groove_mode")) c.metrics.groove_mode = groove_mode_from(m.at("groove_mode").get<std::string>());
    } else {
      c.metrics.grid = c.codec.grid;
    }
  } catch (const nlohmann::json::exception& e) {
    throw PipelineError("config", e.what());
  } catch (const nn::ModelError& e) {
    throw PipelineError("config", e.what());
  } catch (const std::invalid_argument& e) {
    throw PipelineError("config", e.what());
  }
  if (overrides.seed) c.seed = *overrides.seed;
  if (overrides.tau) c.temperature = parse_temperature(*overrides.tau);
  if (!fs::is_directory(c.corpus_dir)) throw PipelineError("config", "corpus dir " + c.corpus_dir.string() + " does not exist");
  return c;
}

RunConfig load_run_config(const std::string& path, const ConfigOverrides& overrides) {
  if (!fs::exists(path)) throw PipelineError("config", "config file " + path + " does not exist");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw PipelineError("config", path + ": " + e.what());
  }
  return run_config_from_json(j, fs::absolute(path).parent_path(), overrides);
}

// ---- helpers ---------------------------------------------------------------

std::vector<Phrase> phrases_from_score(const Score& score, const std::string& source_id,
                                       const CorpusFilterConfig& filter, int grid, DrumMapResult* drum_map) {
  if (score.ticks_per_quarter % grid != 0) {
    throw std::invalid_argument("resolution " + std::to_string(score.ticks_per_quarter) +
                                " is not divisible by grid " + std::to_string(grid));
  }
  const Score q = quantize(score, score.ticks_per_quarter / grid);
  const auto tracks = select_tracks(q);
  const auto drums = map_drum_pitches(tracks.drums.notes, q.ticks_per_quarter);
  if (drum_map != nullptr) *drum_map = drums;
  const auto roles = make_piece_roles(q, tracks, drums, source_id);
  return filter_phrases(segment_phrases(roles, filter), filter);
}

Score phrase_to_score(const Phrase& phrase, int tpq) {
  Score s;
  s.ticks_per_quarter = tpq;
  std::vector<Tick> starts;
  Tick pos = 0;
  for (const auto& b : phrase.bars) {
    starts.push_back(pos);
    if (s.tempo_map.empty() || s.tempo_map.back().bpm != b.tempo_bpm) s.tempo_map.push_back({pos, b.tempo_bpm});
    if (s.ts_map.empty() || s.ts_map.back().ts != b.ts) s.ts_map.push_back({pos, b.ts});
    pos += floor_int(b.ts.quarters() * tpq);
  }
  auto tick_of = [&](int bar, const Rational& q) { return starts.at(static_cast<std::size_t>(bar)) + floor_int(q * tpq); };

  // Pitches are taken from a pool so that no two sounding notes share a pitch.
  auto render = [&](const std::vector<AccompEvent>& events, int low, int high, Track& track) {
    std::vector<Tick> busy_until(static_cast<std::size_t>(high - low + 1), -1);
    std::vector<std::pair<Tick, const AccompEvent*>> order;
    for (const auto& e : events) order.push_back({tick_of(e.bar, e.onset), &e});
    std::stable_sort(order.begin(), order.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    for (const auto& [on, e] : order) {
      const Tick dur = floor_int(e->duration * tpq);
      int need = e->kind == EventKind::Chord ? 3 : 1;
      for (int i = 0; i < static_cast<int>(busy_until.size()) && need > 0; ++i) {
        if (busy_until[static_cast<std::size_t>(i)] > on) continue;
        track.notes.push_back({on, dur, low + i});
        busy_until[static_cast<std::size_t>(i)] = on + std::max<Tick>(dur, 1);
        --need;
      }
      if (need > 0) throw std::invalid_argument("too many overlapping notes to render phrase " + phrase.source_id);
    }
  };
  Track guitar{TrackRole::Guitar, 0, 25, {}};
  Track bass{TrackRole::Bass, 1, 33, {}};
  Track drums{TrackRole::Drums, 9, 0, {}};
  render(phrase.guitar, 52, 88, guitar);
  render(phrase.bass, 28, 60, bass);
  for (const auto& d : phrase.drums) drums.notes.push_back({tick_of(d.bar, d.onset), tpq / 4, render_pitch(d.component)});
  s.tracks = {std::move(guitar), std::move(bass), std::move(drums)};
  normalize(s);
  return s;
}

std::string file_stem(const std::string& source_id) {
  std::string out;
  for (char ch : source_id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.';
    out += ok ? ch : '_';
  }
  return out;
}

ordered_json stamp_json(const ArtifactStamp& stamp) {
  return {{"config_hash", stamp.config_hash}, {"seed", stamp.seed}};
}

void write_phrase_file(const fs::path& path, const Phrase& phrase, const ArtifactStamp& stamp) {
  write_json(path, {{"stamp", stamp_json(stamp)}, {"phrase", phrase_to_json(phrase)}});
}

Phrase read_phrase_file(const fs::path& path) {
  const auto j = ordered_json::parse(read_text_file(path.string()));
  return phrase_from_json(j.at("phrase"));
}

// ---- preprocess ------------------------------------------------------------

ordered_json PreprocessStats::to_json() const {
  ordered_json j;
  j["files"] = files;
  j["used_files"] = used_files;
  j["skipped"] = skipped;
  j["phrases_segmented"] = phrases_segmented;
  j["phrases_kept"] = phrases_kept;
  j["split_counts"] = {{"train", split_counts[0]}, {"valid", split_counts[1]}, {"test", split_counts[2]}};
  j["dropped_drum_notes"] = dropped_drum_notes;
  ordered_json pitches = ordered_json::object();
  for (const auto& [p, n] : dropped_by_pitch) pitches[std::to_string(p)] = n;
  j["dropped_by_pitch"] = pitches;
  j["ts_histogram"] = ts_histogram;
  return j;
}

PreprocessStats run_preprocess(const RunConfig& cfg) {
  PreprocessStats st;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(cfg.corpus_dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".mid" || ext == ".midi") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw PipelineError("preprocess", "no input files in " + cfg.corpus_dir.string());
  st.files = static_cast<int>(files.size());

  std::ostringstream log;
  std::vector<Phrase> all;
  for (const auto& path : files) {
    const auto name = path.filename().string();
    try {
      const auto parsed = parse_midi(read_file_bytes(path.string()));
      for (const auto& w : parsed.warnings) log << "warn " << name << ": " << w << '\n';
      if (parsed.score.ticks_per_quarter % cfg.codec.grid != 0) {
        throw std::invalid_argument("resolution " + std::to_string(parsed.score.ticks_per_quarter) +
                                    " is not divisible by grid " + std::to_string(cfg.codec.grid));
      }
      const auto q = quantize(parsed.score, parsed.score.ticks_per_quarter / cfg.codec.grid);
      const auto tracks = select_tracks(q);
      const auto dm = map_drum_pitches(tracks.drums.notes, q.ticks_per_quarter);
      const auto segmented = segment_phrases(make_piece_roles(q, tracks, dm, path.stem().string()), cfg.filter);
      const auto kept = filter_phrases(segmented, cfg.filter);
      st.phrases_segmented += static_cast<int>(segmented.size());
      st.dropped_drum_notes += dm.dropped;
      for (const auto& [p, n] : dm.dropped_by_pitch) st.dropped_by_pitch[p] += n;
      ++st.used_files;
      log << "use " << name << ": " << kept.size() << " of " << segmented.size() << " phrases kept\n";
      all.insert(all.end(), kept.begin(), kept.end());
    } catch (const std::exception& e) {
      st.skipped[name] = e.what();
      log << "skip " << name << ": " << e.what() << '\n';
    }
  }
  st.phrases_kept = static_cast<int>(all.size());
  for (const auto& p : all) {
    for (const auto& b : p.bars) ++st.ts_histogram[to_string(b.ts)];
  }
  if (all.size() < 10) {
    throw PipelineError("preprocess", "only " + std::to_string(all.size()) + " phrases survived filtering; need 10");
  }
  const auto split = split_dataset(all, cfg.seed, cfg.split);
  const ArtifactStamp stamp{cfg.data_hash(), cfg.seed};
  ordered_json manifest;
  manifest["stamp"] = stamp_json(stamp);
  const std::array<const std::vector<Phrase>*, 3> parts = {&split.train, &split.valid, &split.test};
  fs::create_directories(cfg.work_dir / "phrases");
  for (std::size_t i = 0; i < 3; ++i) {
    st.split_counts[i] = parts[i]->size();
    write_phrase_store(phrase_path(cfg, kSplits[i]).string(), *parts[i], stamp);
    auto ids = ordered_json::array();
    for (const auto& p : *parts[i]) ids.push_back(p.source_id);
    manifest[kSplits[i]] = ids;
  }
  write_json(cfg.work_dir / "splits.json", manifest);
  auto stats = st.to_json();
  stats["stamp"] = stamp_json(stamp);
  write_json(cfg.work_dir / "preprocess_stats.json", stats);
  write_text_file((cfg.work_dir / "preprocess.log").string(), log.str());
  return st;
}

// ---- vocab / tokenize ------------------------------------------------------

VocabPair run_vocab(const RunConfig& cfg) {
  std::vector<Phrase> all;
  for (const auto* split : kSplits) {
    auto store = load_store(cfg, "vocab", split);
    all.insert(all.end(), store.phrases.begin(), store.phrases.end());
  }
  auto v = build_vocab(all, cfg.codec, {cfg.data_hash(), cfg.seed});
  write_text_file((cfg.work_dir / "vocab.json").string(), serialize_vocab_pair(v));
  return v;
}

void run_tokenize(const RunConfig& cfg) {
  const auto vocab = load_vocab(cfg, "tokenize");
  if (!(vocab.encoder.options == cfg.codec)) throw PipelineError("tokenize", "vocabulary codec options differ from the config");
  fs::create_directories(cfg.work_dir / "tokens");
  for (const auto* split : kSplits) {
    const auto store = load_store(cfg, "tokenize", split);
    TokenDataset ds;
    ds.stamp = {cfg.data_hash(), cfg.seed};
    for (const auto& p : store.phrases) ds.records.push_back(tokenize_phrase(p, vocab));
    write_token_dataset(token_path(cfg, split).string(), ds);
  }
}

// ---- train -----------------------------------------------------------------

TrainReport run_train(const RunConfig& cfg) {
  const auto vocab = load_vocab(cfg, "train");
  auto train_ds = load_tokens(cfg, "train", "train");
  auto valid_ds = load_tokens(cfg, "train", "valid");
  if (!(train_ds.stamp == vocab.encoder.stamp)) throw PipelineError("train", "token dataset and vocabulary hashes differ");
  nn::ModelConfig mc = cfg.model;
  mc.set_vocab(vocab);
  mc.validate();

  auto fits = [&](const TokenizedPhrase& p) {
    return static_cast<int>(p.condition.size()) <= mc.max_enc_len && static_cast<int>(p.drums.size()) <= mc.max_dec_len;
  };
  std::vector<TokenizedPhrase> train_set, valid_set;
  std::copy_if(train_ds.records.begin(), train_ds.records.end(), std::back_inserter(train_set), fits);
  std::copy_if(valid_ds.records.begin(), valid_ds.records.end(), std::back_inserter(valid_set), fits);
  if (train_set.empty()) throw PipelineError("train", "no training phrase fits the model's length limits");

  nn::Model<float> model(mc, cfg.seed);
  nn::TrainOptions opts;
  opts.out_dir = (cfg.work_dir / "checkpoints").string();
  opts.max_epochs = cfg.max_epochs;
  opts.max_steps = cfg.max_steps;
  opts.stamp = {cfg.run_hash(), cfg.seed};
  nn::TrainSummary s;
  try {
    s = nn::train(model, train_set, valid_set, cfg.seed, opts);
  } catch (const nn::TrainingError& e) {
    throw PipelineError("train", e.what());
  }
  TrainReport r;
  r.steps = s.state.step;
  r.epochs = s.state.epoch;
  r.best_valid = s.state.best_valid;
  r.best_epoch = s.state.best_epoch;
  r.early_stopped = s.early_stopped;
  r.best_checkpoint = s.best_checkpoint;
  ordered_json j;
  j["stamp"] = stamp_json(opts.stamp);
  j["steps"] = r.steps;
  j["epochs"] = r.epochs;
  j["best_epoch"] = r.best_epoch;
  j["best_valid_loss"] = r.best_valid;
  j["early_stopped"] = r.early_stopped;
  j["train_phrases"] = train_set.size();
  j["valid_phrases"] = valid_set.size();
  j["skipped_overlength"] = (train_ds.records.size() - train_set.size()) + (valid_ds.records.size() - valid_set.size());
  j["parameters"] = model.parameter_count();
  write_json(cfg.work_dir / "checkpoints" / "summary.json", j);
  return r;
}

// ---- generate --------------------------------------------------------------

GenerateReport run_generate(const RunConfig& cfg, const std::string& checkpoint, const std::string& split) {
  if (std::find(kSplits.begin(), kSplits.end(), split) == kSplits.end()) {
    throw PipelineError("generate", "unknown split '" + split + "'");
  }
  const auto vocab = load_vocab(cfg, "generate");
  const fs::path ckpt_path = checkpoint.empty() ? cfg.work_dir / "checkpoints" / "best.ckpt" : fs::path(checkpoint);
  if (!fs::exists(ckpt_path)) throw PipelineError("generate", "missing checkpoint " + ckpt_path.string());
  nn::Checkpoint ckpt;
  try {
    ckpt = nn::load_checkpoint(ckpt_path.string());
  } catch (const nn::TrainingError& e) {
    throw PipelineError("generate", e.what());
  }
  nn::ModelConfig expect = ckpt.config;
  expect.set_vocab(vocab);
  if (expect.enc_vocab != ckpt.config.enc_vocab || expect.dec_vocab != ckpt.config.dec_vocab) {
    throw PipelineError("generate", "checkpoint vocabulary sizes differ from " + (cfg.work_dir / "vocab.json").string());
  }
  nn::Model<float> model(ckpt.config);
  nn::restore(ckpt, model, nullptr);

  const auto store = load_store(cfg, "generate", split.c_str());
  GenerateReport r;
  r.generated_dir = cfg.work_dir / "generated";
  r.truth_dir = cfg.work_dir / "truth";
  fs::create_directories(r.generated_dir);
  fs::create_directories(r.truth_dir);
  const ArtifactStamp stamp{cfg.run_hash(), cfg.seed};
  const ArtifactStamp truth_stamp{cfg.data_hash(), cfg.seed};
  ordered_json manifest;
  manifest["stamp"] = stamp_json(stamp);
  manifest["checkpoint"] = ckpt_path.string();
  manifest["tau"] = temperature_json(cfg.temperature);
  auto items = ordered_json::array();
  auto skipped = ordered_json::array();
  nn::GenerateOptions opts;
  opts.temperature = cfg.temperature;

  std::size_t n = store.phrases.size();
  if (cfg.generate_limit > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(cfg.generate_limit));
  for (std::size_t i = 0; i < n; ++i) {
    const Phrase& seed_phrase = store.phrases[i];
    const auto condition = encode_condition(seed_phrase, vocab.encoder);
    if (static_cast<int>(condition.size()) > ckpt.config.max_enc_len) {
      skipped.push_back({{"source_id", seed_phrase.source_id}, {"reason", "condition longer than max_enc_len"}});
      continue;
    }
    std::mt19937_64 rng(nn::splitmix64(cfg.seed ^ nn::splitmix64(i + 1)));
    const auto g = nn::generate(model, condition, seed_phrase.bars, vocab.decoder, opts, rng);
    const auto decoded = decode_drums(g.words, vocab.decoder, seed_phrase.bars);
    Phrase out = seed_phrase;
    out.drums = decoded.events;

    const auto stem = file_stem(seed_phrase.source_id);
    write_file_bytes((r.generated_dir / (stem + ".mid")).string(), write_midi(phrase_to_score(out)));
    ordered_json tj;
    tj["stamp"] = stamp_json(stamp);
    tj["source_id"] = seed_phrase.source_id;
    tj["tau"] = g.tau;
    auto words = ordered_json::array();
    auto text = ordered_json::array();
    for (const auto& w : g.words) {
      words.push_back({w.onset, w.drums});
      text.push_back(describe(w, vocab.decoder));
    }
    tj["words"] = words;
    tj["tokens"] = text;
    write_json(r.generated_dir / (stem + ".tokens.json"), tj);
    write_phrase_file(r.generated_dir / (stem + ".phrase.json"), out, stamp);
    write_phrase_file(r.truth_dir / (stem + ".phrase.json"), seed_phrase, truth_stamp);
    items.push_back({{"source_id", seed_phrase.source_id}, {"file", stem}, {"tau", g.tau},
                     {"words", g.words.size()}, {"bars", decoded.bars}, {"eos", decoded.saw_eos}});
    r.source_ids.push_back(seed_phrase.source_id);
    r.taus.push_back(g.tau);
  }
  manifest["items"] = items;
  manifest["skipped"] = skipped;
  write_json(r.generated_dir / "manifest.json", manifest);
  return r;
}

// ---- evaluate --------------------------------------------------------------

ordered_json EvaluationBundle::to_json() const {
  ordered_json j;
  j["pairs"] = source_ids.size();
  j["unpaired"] = unpaired;
  j["density"] = {{"generated", density_json(generated_density)}, {"ground_truth", density_json(truth_density)},
                  {"reference_training_dataset",
                   {{"empty_bars_pct", kPaperTrainingDensity[0]},
                    {"kick_snares", kPaperTrainingDensity[1]},
                    {"hh_rides", kPaperTrainingDensity[2]},
                    {"toms", kPaperTrainingDensity[3]},
                    {"cymbals", kPaperTrainingDensity[4]}}}};
  ordered_json diffs;
  for (std::size_t f = 0; f < 5; ++f) {
    diffs[kFeatureNames[f]] = {{"mean", diff.features[f].mean},
                               {"stddev", diff.features[f].stddev},
                               {"norm", diff.norm[f]},
                               {"reference_mean", kPaperDiffMeans[f]},
                               {"reference_stddev", kPaperDiffStddevs[f]}};
  }
  j["differences"] = diffs;
  auto per = ordered_json::array();
  for (std::size_t i = 0; i < source_ids.size(); ++i) {
    per.push_back({{"source_id", source_ids[i]}, {"generated", metric_json(generated[i])}, {"truth", metric_json(truth[i])}});
  }
  j["phrases"] = per;
  return j;
}

EvaluationBundle run_evaluate(const RunConfig& cfg, const fs::path& generated_dir, const fs::path& truth_dir) {
  const std::string suffix = ".phrase.json";
  auto load_dir = [&](const fs::path& dir) {
    if (!fs::is_directory(dir)) throw PipelineError("evaluate", "missing directory " + dir.string());
    std::map<std::string, Phrase> out;
    for (const auto& f : files_with_suffix(dir, suffix)) {
      auto p = read_phrase_file(f);
      out.emplace(p.source_id, std::move(p));
    }
    return out;
  };
  const auto gen = load_dir(generated_dir);
  const auto truth = load_dir(truth_dir);
  EvaluationBundle b;
  std::vector<Phrase> gen_list, truth_list;
  for (const auto& [id, p] : gen) {
    const auto it = truth.find(id);
    if (it == truth.end()) {
      b.unpaired.push_back(id);
      continue;
    }
    b.source_ids.push_back(id);
    gen_list.push_back(p);
    truth_list.push_back(it->second);
    b.generated.push_back(compute_metrics(p, cfg.metrics));
    b.truth.push_back(compute_metrics(it->second, cfg.metrics));
  }
  for (const auto& [id, p] : truth) {
    if (!gen.count(id)) b.unpaired.push_back(id);
  }
  if (b.source_ids.empty()) throw PipelineError("evaluate", "no paired phrase files");
  b.generated_density = corpus_density(gen_list);
  b.truth_density = corpus_density(truth_list);
  b.diff = metric_diff_report(b.generated, b.truth);

  DensityRow reference{"Training Dataset (reference)", kPaperTrainingDensity};
  b.density_table =
      render_density_table({reference, density_row("Ground truth", b.truth_density), density_row("Generated", b.generated_density)});
  DiffRow paper{"Reference (paper scale)", {}};
  for (std::size_t f = 0; f < 5; ++f) paper.stats[f] = {kPaperDiffMeans[f], kPaperDiffStddevs[f]};
  b.diff_table = render_diff_table({diff_row("Generated vs ground truth", b.diff), paper});

  ordered_json j;
  j["stamp"] = stamp_json({cfg.run_hash(), cfg.seed});
  const auto body = b.to_json();
  for (const auto& [k, v] : body.items()) j[k] = v;
  write_json(cfg.work_dir / "reports" / "evaluation.json", j);
  write_text_file((cfg.work_dir / "reports" / "evaluation.txt").string(),
                  "Drum density per bar\n" + b.density_table + "\nHigh-level feature differences (x100)\n" + b.diff_table);
  return b;
}

// ---- metrics ---------------------------------------------------------------

ordered_json run_metrics(const RunConfig& cfg, const fs::path& input) {
  std::vector<Phrase> phrases;
  if (fs::is_directory(input)) {
    for (const auto& f : files_with_suffix(input, ".phrase.json")) phrases.push_back(read_phrase_file(f));
  } else if (fs::exists(input)) {
    phrases = read_phrase_store(input.string()).phrases;
  } else {
    throw PipelineError("metrics", "missing input " + input.string());
  }
  if (phrases.empty()) throw PipelineError("metrics", "no phrases in " + input.string());
  ordered_json j;
  j["stamp"] = stamp_json({cfg.run_hash(), cfg.seed});
  j["input"] = input.string();
  j["density"] = density_json(corpus_density(phrases));
  auto per = ordered_json::array();
  for (const auto& p : phrases) per.push_back({{"source_id", p.source_id}, {"metrics", metric_json(compute_metrics(p, cfg.metrics))}});
  j["phrases"] = per;
  write_json(cfg.work_dir / "reports" / "metrics.json", j);
  return j;
}

}  // namespace cpdrums
