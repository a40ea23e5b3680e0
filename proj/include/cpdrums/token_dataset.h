/**
 * @file token_dataset.h
 * @brief Binary tokenized-dataset file.
 *
 * Little-endian throughout:
 *   char[4]  magic "CPTK"
 *   u32      version (1)
 *   u32      n, then n bytes: config hash
 *   u64      seed
 *   u32      record count
 *   per record:
 *     u32 n, n bytes   source_id
 *     u32 bars, then per bar: u32 source bar index, u16 ts numerator,
 *                             u16 ts denominator, i64 tempo numerator,
 *                             i64 tempo denominator
 *     u32 enc_len, then enc_len x 5 x u32   (onset, group, type, duration, value)
 *     u32 dec_len, then dec_len x 2 x u32   (onset, drums)
 */

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cpdrums/codec.h"

namespace cpdrums {

struct TokenizedPhrase {
  std::string source_id;
  std::vector<Bar> bars;
  std::vector<EncoderWord> condition;
  std::vector<DecoderWord> drums;

  bool operator==(const TokenizedPhrase&) const = default;
};

struct TokenDataset {
  ArtifactStamp stamp;
  std::vector<TokenizedPhrase> records;

  bool operator==(const TokenDataset&) const = default;
};

TokenizedPhrase tokenize_phrase(const Phrase& phrase, const VocabPair& vocab);

std::vector<std::uint8_t> serialize_token_dataset(const TokenDataset& ds);
TokenDataset parse_token_dataset(const std::vector<std::uint8_t>& bytes);

void write_token_dataset(const std::string& path, const TokenDataset& ds);
TokenDataset read_token_dataset(const std::string& path);

}  // namespace cpdrums
