/**
 * @file vocab.cpp
 * @brief Vocabulary construction and serialization.
 */

#include "cpdrums/vocab.h"

#include <algorithm>

namespace cpdrums {

using nlohmann::ordered_json;

DimensionTable::DimensionTable(std::string name, std::vector<std::string> tokens)
    : name_(std::move(name)), tokens_(std::move(tokens)) {
  for (int i = 0; i < size(); ++i) {
    if (!ids_.emplace(tokens_[static_cast<std::size_t>(i)], i).second) {
      throw VocabularyError("duplicate token '" + tokens_[static_cast<std::size_t>(i)] +
                            "' in dimension " + name_);
    }
  }
}

int DimensionTable::id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) {
    throw VocabularyError("out-of-vocabulary token '" + token + "' in dimension " + name_);
  }
  return it->second;
}

const std::string& DimensionTable::token(int id) const {
  if (id < 0 || id >= size()) {
    throw VocabularyError("id " + std::to_string(id) + " out of range for dimension " + name_);
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::sizes() const {
  std::vector<int> out;
  for (const auto& d : dims) out.push_back(d.size());
  return out;
}

std::string position_token(int steps, int grid) { return to_string(Rational(steps, grid)); }

std::string ts_token(const TimeSignature& ts) { return "ts:" + to_string(ts); }

std::string tempo_token(int bpm_bin) { return "bpm:" + std::to_string(bpm_bin); }

int tempo_bin(const Rational& bpm, int width) {
  if (width <= 0) throw std::invalid_argument("tempo bin width must be positive");
  const Rational scaled = bpm / width + Rational(1, 2);
  return static_cast<int>(floor_int(scaled)) * width;
}

Rational encoded_duration(const AccompEvent& e, const Bar& bar, int grid) {
  Rational d = std::min(e.duration, bar.ts.quarters() - e.onset);
  auto steps = round_half_down(d * grid);
  if (steps < 1) steps = 1;
  return Rational(steps, grid);
}

namespace {

const char* stream_name(StreamKind k) { return k == StreamKind::Encoder ? "encoder" : "decoder"; }

std::vector<std::string> with_structural(std::vector<std::string> structural,
                                         const std::vector<std::string>& content) {
  structural.insert(structural.end(), content.begin(), content.end());
  return structural;
}

TimeSignature parse_ts_text(const std::string& s) {
  const auto r = s.find('/');
  if (r == std::string::npos) throw VocabularyError("bad time signature '" + s + "'");
  return {std::stoi(s.substr(0, r)), std::stoi(s.substr(r + 1))};
}

ordered_json vocab_to_json(const Vocabulary& v) {
  ordered_json j;
  j["schema_version"] = Vocabulary::kSchemaVersion;
  j["stream"] = stream_name(v.stream);
  j["grid"] = v.options.grid;
  j["tempo_bin_width"] = v.options.tempo_bin_width;
  j["emit_highlevel_every_bar"] = v.options.emit_highlevel_every_bar;
  auto ts = ordered_json::array();
  for (const auto& t : v.allowed_ts) ts.push_back(to_string(t));
  j["allowed_ts"] = std::move(ts);
  j["tempo_bins"] = v.tempo_bins;
  j["config_hash"] = v.stamp.config_hash;
  j["seed"] = v.stamp.seed;
  auto dims = ordered_json::array();
  for (const auto& d : v.dims) {
    ordered_json dj;
    dj["name"] = d.name();
    dj["size"] = d.size();
    dj["tokens"] = d.tokens();
    dims.push_back(std::move(dj));
  }
  j["dimensions"] = std::move(dims);
  return j;
}

Vocabulary vocab_from_json(const ordered_json& j) {
  if (j.at("schema_version").get<int>() != Vocabulary::kSchemaVersion) {
    throw VocabularyError("unsupported vocabulary schema version");
  }
  Vocabulary v;
  const auto stream = j.at("stream").get<std::string>();
  if (stream == "encoder") {
    v.stream = StreamKind::Encoder;
  } else if (stream == "decoder") {
    v.stream = StreamKind::Decoder;
  } else {
    throw VocabularyError("unknown stream '" + stream + "'");
  }
  v.options.grid = j.at("grid").get<int>();
  v.options.tempo_bin_width = j.at("tempo_bin_width").get<int>();
  v.options.emit_highlevel_every_bar = j.at("emit_highlevel_every_bar").get<bool>();
  for (const auto& t : j.at("allowed_ts")) v.allowed_ts.push_back(parse_ts_text(t.get<std::string>()));
  v.tempo_bins = j.at("tempo_bins").get<std::vector<int>>();
  v.stamp.config_hash = j.at("config_hash").get<std::string>();
  v.stamp.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& d : j.at("dimensions")) {
    v.dims.emplace_back(d.at("name").get<std::string>(), d.at("tokens").get<std::vector<std::string>>());
    if (v.dims.back().size() != d.at("size").get<int>()) {
      throw VocabularyError("dimension size mismatch for " + v.dims.back().name());
    }
  }
  return v;
}

}  // namespace

VocabPair build_vocab(const std::vector<Phrase>& corpus, const CodecOptions& options,
                      const ArtifactStamp& stamp) {
  if (corpus.empty()) throw VocabularyError("build_vocab: empty corpus");
  if (options.grid < 1) throw VocabularyError("build_vocab: grid must be >= 1");
  const int grid = options.grid;

  std::set<TimeSignature> ts_seen;
  std::set<int> tempo_seen;
  std::set<Rational> durations;
  Rational max_bar(0);
  for (const auto& p : corpus) {
    for (const auto& b : p.bars) {
      ts_seen.insert(b.ts);
      tempo_seen.insert(tempo_bin(b.tempo_bpm, options.tempo_bin_width));
      max_bar = std::max(max_bar, b.ts.quarters());
    }
    for (const auto* events : {&p.guitar, &p.bass}) {
      for (const auto& e : *events) {
        durations.insert(encoded_duration(e, p.bars.at(static_cast<std::size_t>(e.bar)), grid));
      }
    }
  }

  std::vector<std::string> positions;
  const auto max_steps = floor_int(max_bar * grid);
  for (int s = 0; s < max_steps; ++s) positions.push_back(position_token(s, grid));

  std::vector<std::string> duration_tokens;
  for (const auto& d : durations) duration_tokens.push_back(to_string(d));

  std::vector<std::string> value_tokens;
  for (const auto& ts : ts_seen) value_tokens.push_back(ts_token(ts));
  for (const int t : tempo_seen) value_tokens.push_back(tempo_token(t));

  VocabPair out;
  for (auto* v : {&out.encoder, &out.decoder}) {
    v->options = options;
    v->allowed_ts.assign(ts_seen.begin(), ts_seen.end());
    v->tempo_bins.assign(tempo_seen.begin(), tempo_seen.end());
    v->stamp = stamp;
  }
  out.encoder.stream = StreamKind::Encoder;
  out.encoder.dims = {
      DimensionTable("onset", with_structural({tok::kPad, tok::kBarOnset}, positions)),
      DimensionTable("group", {tok::kPad, tok::kGuitar, tok::kBass, tok::kHighLevel}),
      DimensionTable("type",
                     {tok::kPad, tok::kNote, tok::kChord, tok::kBar, tok::kTimeSig, tok::kTempo}),
      DimensionTable("duration", with_structural({tok::kPad, tok::kBar}, duration_tokens)),
      DimensionTable("value", with_structural({tok::kPad, tok::kNaN, tok::kBar}, value_tokens)),
  };

  std::vector<std::string> drum_names;
  for (const auto c : kAllDrumComponents) drum_names.emplace_back(to_string(c));
  out.decoder.stream = StreamKind::Decoder;
  out.decoder.dims = {
      DimensionTable("onset", with_structural({tok::kPad, tok::kBarOnset, tok::kEos}, positions)),
      DimensionTable("drums", with_structural({tok::kPad, tok::kBos, tok::kEos}, drum_names)),
  };
  return out;
}

std::string serialize_vocab(const Vocabulary& v) { return vocab_to_json(v).dump(2) + "\n"; }

Vocabulary parse_vocab(const std::string& text) { return vocab_from_json(ordered_json::parse(text)); }

std::string serialize_vocab_pair(const VocabPair& v) {
  ordered_json j;
  j["schema_version"] = Vocabulary::kSchemaVersion;
  j["encoder"] = vocab_to_json(v.encoder);
  j["decoder"] = vocab_to_json(v.decoder);
  return j.dump(2) + "\n";
}

VocabPair parse_vocab_pair(const std::string& text) {
  const auto j = ordered_json::parse(text);
  if (j.at("schema_version").get<int>() != Vocabulary::kSchemaVersion) {
    throw VocabularyError("unsupported vocabulary schema version");
  }
  VocabPair v{vocab_from_json(j.at("encoder")), vocab_from_json(j.at("decoder"))};
  if (v.encoder.stream != StreamKind::Encoder || v.decoder.stream != StreamKind::Decoder) {
    throw VocabularyError("vocabulary streams are swapped");
  }
  return v;
}

}  // namespace cpdrums
