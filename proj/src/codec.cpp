/**
 * @file codec.cpp
 * @brief Encoder/decoder compound-word streams.
 */

#include "cpdrums/codec.h"

#include <algorithm>
#include <tuple>

namespace cpdrums {

namespace {

int position_id(const DimensionTable& onset_dim, const Rational& onset, int grid) {
  const Rational steps = onset * grid;
  if (steps.denominator() != 1) {
    throw VocabularyError("onset " + to_string(onset) + " is not on the " + std::to_string(grid) +
                          "-per-quarter grid (dimension " + onset_dim.name() + ")");
  }
  return onset_dim.id(position_token(static_cast<int>(steps.numerator()), grid));
}

struct PendingEvent {
  Rational onset;
  int group;
  int type;
  Rational duration;
};

}  // namespace

DecoderSpecials::DecoderSpecials(const Vocabulary& dec) {
  if (dec.stream != StreamKind::Decoder || dec.dims.size() != 2) {
    throw VocabularyError("expected a decoder vocabulary");
  }
  const auto& on = dec.dim(dec_dim::kOnset);
  const auto& dr = dec.dim(dec_dim::kDrums);
  onset_bar = on.id(tok::kBarOnset);
  onset_eos = on.id(tok::kEos);
  drums_bos = dr.id(tok::kBos);
  drums_eos = dr.id(tok::kEos);
  first_position = on.id(position_token(0, dec.options.grid));
  num_positions = on.size() - first_position;
  first_component = dr.id(to_string(DrumComponent::Kick));
}

std::vector<EncoderWord> encode_condition(const Phrase& phrase, const Vocabulary& enc) {
  if (enc.stream != StreamKind::Encoder || enc.dims.size() != 5) {
    throw VocabularyError("expected an encoder vocabulary");
  }
  const int grid = enc.options.grid;
  const auto& onset = enc.dim(enc_dim::kOnset);
  const auto& group = enc.dim(enc_dim::kGroup);
  const auto& type = enc.dim(enc_dim::kType);
  const auto& duration = enc.dim(enc_dim::kDuration);
  const auto& value = enc.dim(enc_dim::kValue);

  const int bar_onset = onset.id(tok::kBarOnset);
  const int high = group.id(tok::kHighLevel);
  const int dur_bar = duration.id(tok::kBar);
  const int nan = value.id(tok::kNaN);
  const int guitar = group.id(tok::kGuitar);
  const int bass = group.id(tok::kBass);
  const int note = type.id(tok::kNote);
  const int chord = type.id(tok::kChord);

  const int first_duration = dur_bar + 1;
  const bool has_durations = duration.size() > first_duration;
  const Rational max_duration =
      has_durations ? parse_rational(duration.token(duration.size() - 1)) : Rational(0);

  std::vector<std::vector<PendingEvent>> per_bar(phrase.bars.size());
  auto collect = [&](const std::vector<AccompEvent>& events, int group_id) {
    for (const auto& e : events) {
      const auto& bar = phrase.bars.at(static_cast<std::size_t>(e.bar));
      Rational d = encoded_duration(e, bar, grid);
      if (has_durations && d > max_duration) d = max_duration;
      per_bar[static_cast<std::size_t>(e.bar)].push_back(
          {e.onset, group_id, e.kind == EventKind::Chord ? chord : note, d});
    }
  };
  collect(phrase.guitar, guitar);
  collect(phrase.bass, bass);

  std::vector<EncoderWord> words;
  int prev_tempo = -1;
  TimeSignature prev_ts{0, 0};
  for (std::size_t b = 0; b < phrase.bars.size(); ++b) {
    const auto& bar = phrase.bars[b];
    words.push_back({bar_onset, high, type.id(tok::kBar), dur_bar, value.id(tok::kBar)});
    const int tempo = tempo_bin(bar.tempo_bpm, enc.options.tempo_bin_width);
    const bool every = enc.options.emit_highlevel_every_bar || b == 0;
    if (every || bar.ts != prev_ts) {
      words.push_back({bar_onset, high, type.id(tok::kTimeSig), dur_bar, value.id(ts_token(bar.ts))});
    }
    if (every || tempo != prev_tempo) {
      words.push_back({bar_onset, high, type.id(tok::kTempo), dur_bar, value.id(tempo_token(tempo))});
    }
    prev_ts = bar.ts;
    prev_tempo = tempo;

    auto& events = per_bar[b];
    std::sort(events.begin(), events.end(), [](const PendingEvent& x, const PendingEvent& y) {
      return std::tie(x.onset, x.group, x.type, x.duration) <
             std::tie(y.onset, y.group, y.type, y.duration);
    });
    for (const auto& e : events) {
      words.push_back({position_id(onset, e.onset, grid), e.group, e.type,
                       duration.id(to_string(e.duration)), nan});
    }
  }
  return words;
}

std::vector<DecoderWord> encode_drums(const Phrase& phrase, const Vocabulary& dec) {
  const DecoderSpecials sp(dec);
  const auto& onset = dec.dim(dec_dim::kOnset);
  const auto& drums = dec.dim(dec_dim::kDrums);

  std::vector<DrumEvent> hits = phrase.drums;
  std::sort(hits.begin(), hits.end(), drum_event_less);

  std::vector<DecoderWord> words{sp.bos()};
  std::size_t h = 0;
  for (int b = 0; b < static_cast<int>(phrase.bars.size()); ++b) {
    words.push_back(sp.bar());
    for (; h < hits.size() && hits[h].bar == b; ++h) {
      words.push_back({position_id(onset, hits[h].onset, dec.options.grid),
                       drums.id(to_string(hits[h].component))});
    }
  }
  if (h != hits.size()) throw VocabularyError("drum event references a bar outside the phrase");
  words.push_back(sp.eos());
  return words;
}

DecodeResult decode_drums(const std::vector<DecoderWord>& words, const Vocabulary& dec,
                          const std::vector<Bar>& bar_context) {
  const DecoderSpecials sp(dec);
  const auto& onset = dec.dim(dec_dim::kOnset);
  const auto& drums = dec.dim(dec_dim::kDrums);
  const int grid = dec.options.grid;

  if (words.empty() || words.front() != sp.bos()) {
    throw VocabularyError("decoder stream must begin with BOS");
  }
  DecodeResult out;
  for (std::size_t i = 1; i < words.size(); ++i) {
    const auto& w = words[i];
    onset.token(w.onset);
    drums.token(w.drums);
    if (w.onset == sp.onset_eos) {
      out.saw_eos = true;
      break;
    }
    if (w.onset == sp.onset_bar) {
      if (++out.bars > static_cast<int>(bar_context.size())) {
        throw VocabularyError("decoder stream has more bars than the bar context");
      }
      continue;
    }
    if (w == DecoderWord{}) continue;  // padding
    if (!sp.is_position(w.onset) || !sp.is_component(w.drums)) {
      throw VocabularyError("malformed decoder word at " + std::to_string(i) + ": " +
                            describe(w, dec));
    }
    if (out.bars == 0) throw VocabularyError("drum hit before the first BAR word");
    const int bar = out.bars - 1;
    const auto bar_steps = floor_int(bar_context[static_cast<std::size_t>(bar)].ts.quarters() * grid);
    std::int64_t steps = w.onset - sp.first_position;
    if (steps >= bar_steps) {
      steps = bar_steps - 1;
      ++out.clamped;
    }
    out.events.push_back({bar, Rational(steps, grid),
                          static_cast<DrumComponent>(w.drums - sp.first_component)});
  }
  return out;
}

std::vector<std::string> check_encoder_grammar(const std::vector<EncoderWord>& words,
                                               const Vocabulary& enc) {
  std::vector<std::string> v;
  const auto& group = enc.dim(enc_dim::kGroup);
  const auto& type = enc.dim(enc_dim::kType);
  const auto& duration = enc.dim(enc_dim::kDuration);
  const auto& value = enc.dim(enc_dim::kValue);
  const int high = group.id(tok::kHighLevel);
  const int bar_type = type.id(tok::kBar);
  const int dur_bar = duration.id(tok::kBar);
  const int nan = value.id(tok::kNaN);
  const int note = type.id(tok::kNote);
  const int chord = type.id(tok::kChord);

  if (words.empty()) {
    v.push_back("empty encoder stream");
    return v;
  }
  if (words.front().group != high || words.front().type != bar_type) {
    v.push_back("stream does not begin with a HighLevel/Bar word");
  }
  int last_onset = -1;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto& w = words[i];
    const std::string at = " at word " + std::to_string(i);
    if (w.group == high && w.type == bar_type) last_onset = -1;
    // Onset ids ascend with position; BAR sorts before every grid position.
    if (w.onset < last_onset) v.push_back("onset decreases within a bar" + at);
    last_onset = w.onset;
    if (w.group == high) {
      const auto& t = type.token(w.type);
      if (t != tok::kBar && t != tok::kTimeSig && t != tok::kTempo) {
        v.push_back("HighLevel word with type " + t + at);
      }
      if (w.duration != dur_bar) v.push_back("HighLevel word without Bar duration" + at);
    } else {
      if (w.type != note && w.type != chord) v.push_back("accompaniment word type not Note/Chord" + at);
      if (w.value != nan) v.push_back("accompaniment word value is not NaN" + at);
      if (w.duration == dur_bar || w.duration == kPadId) {
        v.push_back("accompaniment word without a duration" + at);
      }
    }
  }
  return v;
}

std::vector<std::string> check_decoder_grammar(const std::vector<DecoderWord>& words,
                                               const Vocabulary& dec, int expected_bars) {
  std::vector<std::string> v;
  const DecoderSpecials sp(dec);
  if (words.empty() || words.front() != sp.bos()) v.push_back("stream does not begin with BOS");
  if (words.empty() || words.back() != sp.eos()) v.push_back("stream does not end with EOS");
  int bars = 0;
  int last = -1;
  for (std::size_t i = 1; i + 1 < words.size(); ++i) {
    const auto& w = words[i];
    const std::string at = " at word " + std::to_string(i);
    if (w == sp.bar()) {
      ++bars;
      last = -1;
      continue;
    }
    if (!sp.is_position(w.onset) || !sp.is_component(w.drums)) {
      v.push_back("malformed word" + at);
      continue;
    }
    if (bars == 0) v.push_back("hit before first BAR" + at);
    if (w.onset < last) v.push_back("onset decreases within a bar" + at);
    last = w.onset;
  }
  if (bars != expected_bars) {
    v.push_back("BAR count " + std::to_string(bars) + " != " + std::to_string(expected_bars));
  }
  return v;
}

std::string describe(const EncoderWord& w, const Vocabulary& enc) {
  const auto ids = w.ids();
  std::string s = "(";
  for (int d = 0; d < 5; ++d) {
    if (d) s += ", ";
    s += enc.dim(d).token(ids[static_cast<std::size_t>(d)]);
  }
  return s + ")";
}

std::string describe(const DecoderWord& w, const Vocabulary& dec) {
  return "(" + dec.dim(0).token(w.onset) + ", " + dec.dim(1).token(w.drums) + ")";
}

}  // namespace cpdrums
