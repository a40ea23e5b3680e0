/**
 * @file preprocess.cpp
 * @brief Track selection, drum mapping, phrase segmentation, filtering and splitting.
 */

#include "cpdrums/preprocess.h"

#include <algorithm>
#include <random>
#include <tuple>

namespace cpdrums {

namespace {

Rational to_quarters(Tick tick, int tpq) { return Rational(tick, tpq); }

std::size_t bar_of(const std::vector<BarSpan>& spans, const Rational& pos) {
  auto it = std::upper_bound(spans.begin(), spans.end(), pos,
                             [](const Rational& p, const BarSpan& s) { return p < s.start; });
  return static_cast<std::size_t>(std::distance(spans.begin(), it)) - 1;
}

bool accomp_less(const AccompEvent& a, const AccompEvent& b) {
  return std::tie(a.bar, a.onset, a.kind, a.duration) < std::tie(b.bar, b.onset, b.kind, b.duration);
}

}  // namespace

bool drum_event_less(const DrumEvent& a, const DrumEvent& b) {
  return std::tie(a.bar, a.onset, a.component) < std::tie(b.bar, b.onset, b.component);
}

void CorpusFilterConfig::validate() const {
  if (!(min_bpm < max_bpm)) throw std::invalid_argument("tempo range: min must be below max");
  if (min_phrase_bars < 1 || min_phrase_bars > kMaxPhraseBars) {
    throw std::invalid_argument("min_phrase_bars must be within 1..16");
  }
  if (allowed_ts.empty()) throw std::invalid_argument("allowed_ts is empty");
}

std::vector<BarSpan> bar_spans(const Score& score, const Rational& last_position) {
  std::vector<BarSpan> spans;
  if (last_position < 0) return spans;
  const int tpq = score.ticks_per_quarter;
  std::vector<std::pair<Rational, TimeSignature>> changes;
  for (const auto& c : score.ts_map) changes.emplace_back(to_quarters(c.tick, tpq), c.ts);
  if (changes.empty() || changes.front().first != 0) {
    changes.insert(changes.begin(), {Rational(0), TimeSignature{}});
  }

  Rational pos(0);
  std::size_t ci = 0;
  while (pos <= last_position) {
    while (ci + 1 < changes.size() && changes[ci + 1].first <= pos) ++ci;
    const auto ts = changes[ci].second;
    Rational end = pos + ts.quarters();
    if (ci + 1 < changes.size() && changes[ci + 1].first < end) end = changes[ci + 1].first;
    spans.push_back({pos, end, ts});
    pos = end;
  }
  return spans;
}

double note_density(const Score& score, const Track& track) {
  if (track.notes.empty()) return 0.0;
  const int tpq = score.ticks_per_quarter;
  const auto spans = bar_spans(score, to_quarters(track.notes.back().onset_tick, tpq));
  std::set<std::size_t> active;
  for (const auto& n : track.notes) active.insert(bar_of(spans, to_quarters(n.onset_tick, tpq)));
  return static_cast<double>(track.notes.size()) / static_cast<double>(active.size());
}

SelectedTracks select_tracks(const Score& score) {
  constexpr std::array<TrackRole, 3> roles = {TrackRole::Guitar, TrackRole::Bass, TrackRole::Drums};
  SelectedTracks out;
  std::string missing;
  for (int r = 0; r < 3; ++r) {
    int best = -1;
    double best_density = -1.0;
    for (std::size_t i = 0; i < score.tracks.size(); ++i) {
      if (score.tracks[i].role_hint != roles[r]) continue;
      const double d = note_density(score, score.tracks[i]);
      if (d > best_density) {
        best = static_cast<int>(i);
        best_density = d;
      }
    }
    if (best < 0) {
      if (!missing.empty()) missing += ", ";
      missing += to_string(roles[r]);
      continue;
    }
    out.source_index[r] = best;
    const Track& t = score.tracks[best];
    (r == 0 ? out.guitar : r == 1 ? out.bass : out.drums) = t;
  }
  if (!missing.empty()) throw MissingRoleError("missing track role(s): " + missing);
  return out;
}

DrumMapResult map_drum_pitches(const std::vector<NoteEvent>& notes, int ticks_per_quarter) {
  DrumMapResult out;
  for (const auto& n : notes) {
    if (const auto c = drum_component_for_pitch(n.pitch)) {
      out.hits.push_back({to_quarters(n.onset_tick, ticks_per_quarter), *c});
    } else {
      ++out.dropped;
      ++out.dropped_by_pitch[n.pitch];
    }
  }
  std::sort(out.hits.begin(), out.hits.end(), [](const DrumHit& a, const DrumHit& b) {
    return std::tie(a.onset, a.component) < std::tie(b.onset, b.component);
  });
  return out;
}

PieceRoles make_piece_roles(const Score& score, const SelectedTracks& tracks,
                            const DrumMapResult& drums, std::string source_id) {
  PieceRoles p;
  p.score = &score;
  p.guitar = tracks.guitar.notes;
  p.bass = tracks.bass.notes;
  p.drums = drums.hits;
  p.source_id = std::move(source_id);
  return p;
}

std::vector<AccompEvent> accompaniment_events(const std::vector<NoteEvent>& notes) {
  // bar is left at 0; segmentation rebases onsets per bar.
  std::map<std::pair<Tick, Tick>, int> groups;
  for (const auto& n : notes) ++groups[{n.onset_tick, n.duration_ticks}];
  std::vector<AccompEvent> out;
  for (const auto& [key, count] : groups) {
    const Rational onset(key.first);
    const Rational dur(key.second);
    if (count >= 2) {
      out.push_back({0, onset, dur, EventKind::Chord});
    } else {
      out.push_back({0, onset, dur, EventKind::Note});
    }
  }
  return out;
}

std::vector<Phrase> segment_phrases(const PieceRoles& piece, const CorpusFilterConfig& config) {
  if (piece.score == nullptr) throw std::invalid_argument("segment_phrases: missing score");
  const Score& score = *piece.score;
  const int tpq = score.ticks_per_quarter;

  // Accompaniment events in ticks, then converted to quarters.
  auto accomp = [&](const std::vector<NoteEvent>& notes) {
    auto events = accompaniment_events(notes);
    for (auto& e : events) {
      e.onset = e.onset / tpq;
      e.duration = e.duration / tpq;
    }
    return events;
  };
  const auto guitar = accomp(piece.guitar);
  const auto bass = accomp(piece.bass);

  Rational last(-1);
  for (const auto& e : guitar) last = std::max(last, e.onset);
  for (const auto& e : bass) last = std::max(last, e.onset);
  for (const auto& h : piece.drums) last = std::max(last, h.onset);
  const auto spans = bar_spans(score, last);
  if (spans.empty()) return {};

  const int total_bars = static_cast<int>(spans.size());
  std::vector<Phrase> phrases;
  for (int first = 0; first < total_bars; first += kMaxPhraseBars) {
    const int count = std::min(kMaxPhraseBars, total_bars - first);
    if (count < kMaxPhraseBars && count < config.min_phrase_bars) break;
    Phrase p;
    p.source_id = piece.source_id + "#" + std::to_string(first / kMaxPhraseBars);
    for (int b = first; b < first + count; ++b) {
      const auto start_tick = floor_int(spans[b].start * tpq);
      p.bars.push_back({b, spans[b].ts, score.tempo_at(start_tick)});
    }
    phrases.push_back(std::move(p));
  }

  auto place = [&](const Rational& onset) -> std::pair<Phrase*, int> {
    const int b = static_cast<int>(bar_of(spans, onset));
    const int pi = b / kMaxPhraseBars;
    if (pi >= static_cast<int>(phrases.size())) return {nullptr, 0};
    return {&phrases[pi], b - pi * kMaxPhraseBars};
  };
  auto place_accomp = [&](const std::vector<AccompEvent>& events, bool is_guitar) {
    for (const auto& e : events) {
      auto [p, local] = place(e.onset);
      if (p == nullptr) continue;
      const auto& span = spans[p->bars[local].index];
      AccompEvent ev{local, e.onset - span.start, e.duration, e.kind};
      (is_guitar ? p->guitar : p->bass).push_back(ev);
    }
  };
  place_accomp(guitar, true);
  place_accomp(bass, false);
  for (const auto& h : piece.drums) {
    auto [p, local] = place(h.onset);
    if (p == nullptr) continue;
    const auto& span = spans[p->bars[local].index];
    p->drums.push_back({local, h.onset - span.start, h.component});
  }
  for (auto& p : phrases) {
    std::sort(p.guitar.begin(), p.guitar.end(), accomp_less);
    std::sort(p.bass.begin(), p.bass.end(), accomp_less);
    std::sort(p.drums.begin(), p.drums.end(), drum_event_less);
  }
  return phrases;
}

bool phrase_allowed(const Phrase& phrase, const CorpusFilterConfig& config) {
  return std::all_of(phrase.bars.begin(), phrase.bars.end(), [&](const Bar& b) {
    return config.allowed_ts.count(b.ts) > 0 && b.tempo_bpm >= config.min_bpm &&
           b.tempo_bpm <= config.max_bpm;
  });
}

std::vector<Phrase> filter_phrases(const std::vector<Phrase>& phrases,
                                   const CorpusFilterConfig& config) {
  std::vector<Phrase> out;
  std::copy_if(phrases.begin(), phrases.end(), std::back_inserter(out),
               [&](const Phrase& p) { return phrase_allowed(p, config); });
  return out;
}

void check_phrase(const Phrase& phrase) {
  const int n = static_cast<int>(phrase.bars.size());
  if (n < 1 || n > kMaxPhraseBars) {
    throw std::logic_error("phrase " + phrase.source_id + ": bar count " + std::to_string(n));
  }
  auto check_pos = [&](int bar, const Rational& onset, const char* what) {
    if (bar < 0 || bar >= n) {
      throw std::logic_error(std::string(what) + " event outside the phrase bars");
    }
    if (onset < 0 || onset >= phrase.bars[bar].ts.quarters()) {
      throw std::logic_error(std::string(what) + " onset " + to_string(onset) +
                             " outside its bar");
    }
  };
  for (const auto& e : phrase.guitar) check_pos(e.bar, e.onset, "guitar");
  for (const auto& e : phrase.bass) check_pos(e.bar, e.onset, "bass");
  for (const auto& e : phrase.drums) check_pos(e.bar, e.onset, "drum");
  for (const auto* events : {&phrase.guitar, &phrase.bass}) {
    for (const auto& e : *events) {
      if (e.duration < 0) throw std::logic_error("negative accompaniment duration");
    }
  }
  if (!std::is_sorted(phrase.drums.begin(), phrase.drums.end(), drum_event_less)) {
    throw std::logic_error("drum events are not in canonical order");
  }
}

SplitSizes split_sizes(std::size_t total, std::array<int, 3> ratio) {
  const std::size_t sum = static_cast<std::size_t>(ratio[0] + ratio[1] + ratio[2]);
  auto nearest = [&](int part) { return (2 * total * part + sum) / (2 * sum); };
  SplitSizes s;
  s.train = nearest(ratio[0]);
  s.valid = nearest(ratio[1]);
  s.test = total - s.train - s.valid;
  return s;
}

DatasetSplit split_dataset(std::vector<Phrase> phrases, std::uint64_t seed,
                           std::array<int, 3> ratio) {
  if (phrases.size() < 10) {
    throw std::invalid_argument("split_dataset: need at least 10 phrases, got " +
                                std::to_string(phrases.size()));
  }
  // Explicit Fisher-Yates so the permutation does not depend on the standard library's
  // distribution implementation.
  std::mt19937_64 rng(seed);
  for (std::size_t i = phrases.size() - 1; i > 0; --i) {
    const std::size_t j = rng() % (i + 1);
    std::swap(phrases[i], phrases[j]);
  }
  const auto sizes = split_sizes(phrases.size(), ratio);
  DatasetSplit out;
  auto it = std::make_move_iterator(phrases.begin());
  out.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes.train));
  it += static_cast<std::ptrdiff_t>(sizes.train);
  out.valid.assign(it, it + static_cast<std::ptrdiff_t>(sizes.valid));
  it += static_cast<std::ptrdiff_t>(sizes.valid);
  out.test.assign(it, std::make_move_iterator(phrases.end()));
  return out;
}

}  // namespace cpdrums
