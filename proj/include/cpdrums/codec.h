/**
 * @file codec.h
 * @brief Compound-word tokenization of phrases.
 *
 * Encoder stream (condition): per bar a HighLevel/Bar word, then HighLevel/TimeSig and
 * HighLevel/Tempo words, then guitar and bass events. Decoder stream (drums): BOS, then
 * per bar a BAR word followed by one word per drum hit, then EOS. Hits sharing an onset
 * repeat the onset token in consecutive words.
 */

#pragma once

#include <array>
#include <string>
#include <vector>

#include "cpdrums/preprocess.h"
#include "cpdrums/vocab.h"

namespace cpdrums {

struct EncoderWord {
  int onset = kPadId;
  int group = kPadId;
  int type = kPadId;
  int duration = kPadId;
  int value = kPadId;

  std::array<int, 5> ids() const { return {onset, group, type, duration, value}; }
  static EncoderWord from_ids(const std::array<int, 5>& a) { return {a[0], a[1], a[2], a[3], a[4]}; }

  bool operator==(const EncoderWord&) const = default;
};

struct DecoderWord {
  int onset = kPadId;
  int drums = kPadId;

  bool operator==(const DecoderWord&) const = default;
};

/// Resolved ids of the decoder's structural tokens.
struct DecoderSpecials {
  int onset_bar;
  int onset_eos;
  int drums_bos;
  int drums_eos;
  int first_position;   // onset id of grid step 0
  int num_positions;
  int first_component;  // drums id of DrumComponent::Kick

  explicit DecoderSpecials(const Vocabulary& dec);

  DecoderWord bos() const { return {kPadId, drums_bos}; }
  DecoderWord bar() const { return {onset_bar, kPadId}; }
  DecoderWord eos() const { return {onset_eos, drums_eos}; }
  bool is_position(int onset_id) const {
    return onset_id >= first_position && onset_id < first_position + num_positions;
  }
  bool is_component(int drums_id) const {
    return drums_id >= first_component && drums_id < first_component + kNumDrumComponents;
  }
};

std::vector<EncoderWord> encode_condition(const Phrase& phrase, const Vocabulary& enc);

std::vector<DecoderWord> encode_drums(const Phrase& phrase, const Vocabulary& dec);

struct DecodeResult {
  std::vector<DrumEvent> events;
  int bars = 0;      // BAR words consumed
  int clamped = 0;   // onsets pulled back inside their bar
  bool saw_eos = false;
};

/// Inverse of encode_drums. `bar_context` supplies each bar's time signature.
DecodeResult decode_drums(const std::vector<DecoderWord>& words, const Vocabulary& dec,
                          const std::vector<Bar>& bar_context);

/// Grammar violations of an encoder stream (empty when valid).
std::vector<std::string> check_encoder_grammar(const std::vector<EncoderWord>& words,
                                               const Vocabulary& enc);

/// Grammar violations of a decoder stream against an expected bar count.
std::vector<std::string> check_decoder_grammar(const std::vector<DecoderWord>& words,
                                               const Vocabulary& dec, int expected_bars);

std::string describe(const EncoderWord& w, const Vocabulary& enc);
std::string describe(const DecoderWord& w, const Vocabulary& dec);

}  // namespace cpdrums
