/**
 * @file vocab.h
 * @brief Per-dimension token tables for the encoder and decoder compound-word streams.
 *
 * Every dimension starts with its structural tokens (PAD is always id 0), followed by
 * content tokens in sorted order. Token spellings:
 *   onset     PAD BAR [EOS] then grid positions in quarters ("0", "1/4", ... "27/4")
 *   group     PAD Guitar Bass HighLevel
 *   type      PAD Note Chord Bar TimeSig Tempo
 *   duration  PAD Bar then durations in quarters
 *   value     PAD NaN Bar then "ts:N/D" and "bpm:B" tokens
 *   drums     PAD BOS EOS then the 13 drum components
 */

#pragma once

#include <array>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "cpdrums/phrase_store.h"
#include "cpdrums/preprocess.h"

namespace cpdrums {

namespace tok {
inline constexpr const char* kPad = "PAD";
inline constexpr const char* kBos = "BOS";
inline constexpr const char* kEos = "EOS";
inline constexpr const char* kBarOnset = "BAR";
inline constexpr const char* kBar = "Bar";
inline constexpr const char* kNaN = "NaN";
inline constexpr const char* kGuitar = "Guitar";
inline constexpr const char* kBass = "Bass";
inline constexpr const char* kHighLevel = "HighLevel";
inline constexpr const char* kNote = "Note";
inline constexpr const char* kChord = "Chord";
inline constexpr const char* kTimeSig = "TimeSig";
inline constexpr const char* kTempo = "Tempo";
}  // namespace tok

inline constexpr int kPadId = 0;

/// Table 1 reference vocabulary sizes at full corpus scale.
inline constexpr std::array<int, 5> kPaperEncoderVocabSizes = {31, 5, 7, 40, 33};
inline constexpr std::array<int, 2> kPaperDecoderVocabSizes = {31, 16};

class VocabularyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionTable {
 public:
  DimensionTable() = default;
  DimensionTable(std::string name, std::vector<std::string> tokens);

  const std::string& name() const { return name_; }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  /// Throws VocabularyError naming the dimension and the token.
  int id(const std::string& token) const;
  const std::string& token(int id) const;

  bool operator==(const DimensionTable& o) const { return name_ == o.name_ && tokens_ == o.tokens_; }

 private:
  std::string name_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

enum class StreamKind { Encoder, Decoder };

struct CodecOptions {
  int grid = 4;  // steps per quarter note
  int tempo_bin_width = 10;
  bool emit_highlevel_every_bar = true;

  bool operator==(const CodecOptions&) const = default;
};

class Vocabulary {
 public:
  static constexpr int kSchemaVersion = 1;

  StreamKind stream = StreamKind::Encoder;
  CodecOptions options;
  std::vector<TimeSignature> allowed_ts;  // observed, sorted
  std::vector<int> tempo_bins;            // observed, sorted
  std::vector<DimensionTable> dims;
  ArtifactStamp stamp;

  const DimensionTable& dim(int i) const { return dims.at(static_cast<std::size_t>(i)); }
  std::vector<int> sizes() const;

  bool operator==(const Vocabulary&) const = default;
};

namespace enc_dim {
inline constexpr int kOnset = 0, kGroup = 1, kType = 2, kDuration = 3, kValue = 4;
}
namespace dec_dim {
inline constexpr int kOnset = 0, kDrums = 1;
}

/// Position token for `steps` grid steps at `grid` steps per quarter.
std::string position_token(int steps, int grid);
std::string ts_token(const TimeSignature& ts);
std::string tempo_token(int bpm_bin);

/// Tempo rounded to the nearest multiple of `width` (halves round up).
int tempo_bin(const Rational& bpm, int width);

/// Duration as encoded: clipped at the bar end, snapped to the grid, at least one step.
Rational encoded_duration(const AccompEvent& e, const Bar& bar, int grid);

struct VocabPair {
  Vocabulary encoder;
  Vocabulary decoder;
};

/// Corpus-derived vocabularies with deterministic id assignment.
VocabPair build_vocab(const std::vector<Phrase>& corpus, const CodecOptions& options,
                      const ArtifactStamp& stamp = {});

std::string serialize_vocab(const Vocabulary& v);
Vocabulary parse_vocab(const std::string& text);

std::string serialize_vocab_pair(const VocabPair& v);
VocabPair parse_vocab_pair(const std::string& text);

}  // namespace cpdrums
