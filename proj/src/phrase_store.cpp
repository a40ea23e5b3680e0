/**
 * @file phrase_store.cpp
 * @brief Phrase store serialization.
 */

#include "cpdrums/phrase_store.h"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cpdrums {

using nlohmann::ordered_json;

namespace {

TimeSignature parse_ts(const std::string& s) {
  const auto r = s.find('/');
  if (r == std::string::npos) throw std::runtime_error("bad time signature '" + s + "'");
  return {std::stoi(s.substr(0, r)), std::stoi(s.substr(r + 1))};
}

ordered_json accomp_to_json(const std::vector<AccompEvent>& events) {
  auto arr = ordered_json::array();
  for (const auto& e : events) {
    arr.push_back({e.bar, to_string(e.onset), to_string(e.duration),
                   e.kind == EventKind::Chord ? "C" : "N"});
  }
  return arr;
}

std::vector<AccompEvent> accomp_from_json(const ordered_json& arr) {
  std::vector<AccompEvent> out;
  for (const auto& e : arr) {
    const auto kind = e.at(3).get<std::string>();
    if (kind != "C" && kind != "N") throw std::runtime_error("bad event kind '" + kind + "'");
    out.push_back({e.at(0).get<int>(), parse_rational(e.at(1).get<std::string>()),
                   parse_rational(e.at(2).get<std::string>()),
                   kind == "C" ? EventKind::Chord : EventKind::Note});
  }
  return out;
}

}  // namespace

ordered_json phrase_to_json(const Phrase& phrase) {
  ordered_json j;
  j["source_id"] = phrase.source_id;
  auto bars = ordered_json::array();
  for (const auto& b : phrase.bars) bars.push_back({b.index, to_string(b.ts), to_string(b.tempo_bpm)});
  j["bars"] = std::move(bars);
  j["guitar"] = accomp_to_json(phrase.guitar);
  j["bass"] = accomp_to_json(phrase.bass);
  auto drums = ordered_json::array();
  for (const auto& d : phrase.drums) drums.push_back({d.bar, to_string(d.onset), to_string(d.component)});
  j["drums"] = std::move(drums);
  return j;
}

Phrase phrase_from_json(const ordered_json& j) {
  Phrase p;
  p.source_id = j.at("source_id").get<std::string>();
  for (const auto& b : j.at("bars")) {
    p.bars.push_back({b.at(0).get<int>(), parse_ts(b.at(1).get<std::string>()),
                      parse_rational(b.at(2).get<std::string>())});
  }
  p.guitar = accomp_from_json(j.at("guitar"));
  p.bass = accomp_from_json(j.at("bass"));
  for (const auto& d : j.at("drums")) {
    const auto name = d.at(2).get<std::string>();
    const auto c = drum_component_from_string(name);
    if (!c) throw std::runtime_error("unknown drum component '" + name + "'");
    p.drums.push_back({d.at(0).get<int>(), parse_rational(d.at(1).get<std::string>()), *c});
  }
  return p;
}

std::string serialize_phrase_store(const std::vector<Phrase>& phrases, const ArtifactStamp& stamp) {
  ordered_json header;
  header["kind"] = "phrase_store";
  header["schema"] = 1;
  header["config_hash"] = stamp.config_hash;
  header["seed"] = stamp.seed;
  header["count"] = phrases.size();
  std::string out = header.dump() + "\n";
  for (const auto& p : phrases) out += phrase_to_json(p).dump() + "\n";
  return out;
}

PhraseStore parse_phrase_store(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("phrase store is empty");
  const auto header = ordered_json::parse(line);
  if (header.value("kind", "") != "phrase_store" || header.value("schema", 0) != 1) {
    throw std::runtime_error("not a schema-1 phrase store");
  }
  PhraseStore store;
  store.stamp.config_hash = header.at("config_hash").get<std::string>();
  store.stamp.seed = header.at("seed").get<std::uint64_t>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    store.phrases.push_back(phrase_from_json(ordered_json::parse(line)));
  }
  if (store.phrases.size() != header.at("count").get<std::size_t>()) {
    throw std::runtime_error("phrase store count mismatch");
  }
  return store;
}

void write_phrase_store(const std::string& path, const std::vector<Phrase>& phrases,
                        const ArtifactStamp& stamp) {
  write_text_file(path, serialize_phrase_store(phrases, stamp));
}

PhraseStore read_phrase_store(const std::string& path) {
  return parse_phrase_store(read_text_file(path));
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cpdrums
