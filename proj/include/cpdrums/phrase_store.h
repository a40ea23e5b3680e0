/**
 * @file phrase_store.h
 * @brief Line-delimited JSON phrase store.
 *
 * Line 1 is a header object:
 *   {"kind":"phrase_store","schema":1,"config_hash":"<hex>","seed":<int>,"count":<n>}
 * Every following line is one phrase, keys in this order:
 *   source_id : string
 *   bars      : [[index, "num/den", "bpm"], ...]           bpm is an exact rational string
 *   guitar    : [[bar, "onset", "duration", "N"|"C"], ...]  quarters within the bar
 *   bass      : same layout as guitar
 *   drums     : [[bar, "onset", "Component"], ...]
 */

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpdrums/preprocess.h"

namespace cpdrums {

struct ArtifactStamp {
  std::string config_hash;
  std::uint64_t seed = 0;

  bool operator==(const ArtifactStamp&) const = default;
};

nlohmann::ordered_json phrase_to_json(const Phrase& phrase);
Phrase phrase_from_json(const nlohmann::ordered_json& j);

std::string serialize_phrase_store(const std::vector<Phrase>& phrases, const ArtifactStamp& stamp);

struct PhraseStore {
  ArtifactStamp stamp;
  std::vector<Phrase> phrases;
};

PhraseStore parse_phrase_store(const std::string& text);

void write_phrase_store(const std::string& path, const std::vector<Phrase>& phrases,
                        const ArtifactStamp& stamp);
PhraseStore read_phrase_store(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

/// 64-bit FNV-1a of `text`, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace cpdrums
