/**
 * @file preprocess.h
 * @brief Corpus preprocessing: role-track selection, drum mapping, phrase segmentation,
 *        phrase filtering and train/valid/test splitting.
 */

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpdrums/drums.h"
#include "cpdrums/midi.h"
#include "cpdrums/rational.h"

namespace cpdrums {

inline constexpr int kMaxPhraseBars = 16;

enum class EventKind { Note, Chord };

/// A guitar or bass event. Positions are quarter notes from the start of its bar.
struct AccompEvent {
  int bar = 0;  // index within the phrase
  Rational onset;
  Rational duration;
  EventKind kind = EventKind::Note;

  bool operator==(const AccompEvent&) const = default;
};

struct DrumEvent {
  int bar = 0;  // index within the phrase
  Rational onset;
  DrumComponent component = DrumComponent::Kick;

  bool operator==(const DrumEvent&) const = default;
};

/// Canonical drum order: (bar, onset, component).
bool drum_event_less(const DrumEvent& a, const DrumEvent& b);

struct Bar {
  int index = 0;  // bar number in the source piece
  TimeSignature ts;
  Rational tempo_bpm{120};

  bool operator==(const Bar&) const = default;
};

struct Phrase {
  std::vector<Bar> bars;
  std::vector<AccompEvent> guitar;
  std::vector<AccompEvent> bass;
  std::vector<DrumEvent> drums;
  std::string source_id;

  bool operator==(const Phrase&) const = default;
};

struct CorpusFilterConfig {
  std::set<TimeSignature> allowed_ts = {{4, 4}, {3, 4}, {6, 8}, {2, 4},
                                        {5, 4}, {7, 4}, {12, 8}, {2, 2}};
  Rational min_bpm{60};
  Rational max_bpm{220};
  int min_phrase_bars = 2;

  void validate() const;
};

class MissingRoleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SelectedTracks {
  Track guitar;
  Track bass;
  Track drums;
  std::array<int, 3> source_index{};  // indices into Score::tracks
};

struct BarSpan {
  Rational start;  // quarters from the start of the piece
  Rational end;
  TimeSignature ts;
};

/// Bars implied by the time-signature map, up to and including the bar that contains
/// `last_position` (in quarters). A signature change inside a bar cuts that bar short.
std::vector<BarSpan> bar_spans(const Score& score, const Rational& last_position);

/// Notes per active bar (bars holding at least one onset).
double note_density(const Score& score, const Track& track);

/// Per role, the densest candidate track; ties go to the lower track index.
SelectedTracks select_tracks(const Score& score);

struct DrumHit {
  Rational onset;  // quarters from the start of the piece
  DrumComponent component;

  bool operator==(const DrumHit&) const = default;
};

struct DrumMapResult {
  std::vector<DrumHit> hits;
  int dropped = 0;
  std::map<int, int> dropped_by_pitch;
};

DrumMapResult map_drum_pitches(const std::vector<NoteEvent>& notes, int ticks_per_quarter);

/// The role material of one piece, ready for segmentation.
struct PieceRoles {
  const Score* score = nullptr;  // supplies resolution and the tempo/TS maps
  std::vector<NoteEvent> guitar;
  std::vector<NoteEvent> bass;
  std::vector<DrumHit> drums;
  std::string source_id;
};

PieceRoles make_piece_roles(const Score& score, const SelectedTracks& tracks,
                            const DrumMapResult& drums, std::string source_id);

/// Groups notes sharing onset and duration into Chord events, everything else is a Note.
std::vector<AccompEvent> accompaniment_events(const std::vector<NoteEvent>& notes);

std::vector<Phrase> segment_phrases(const PieceRoles& piece, const CorpusFilterConfig& config);

bool phrase_allowed(const Phrase& phrase, const CorpusFilterConfig& config);
std::vector<Phrase> filter_phrases(const std::vector<Phrase>& phrases,
                                   const CorpusFilterConfig& config);

/// Throws std::logic_error describing the first violated Phrase invariant.
void check_phrase(const Phrase& phrase);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
};

/// Sizes for an 8:1:1 style split: train and valid round to nearest, test takes the rest.
SplitSizes split_sizes(std::size_t total, std::array<int, 3> ratio = {8, 1, 1});

struct DatasetSplit {
  std::vector<Phrase> train;
  std::vector<Phrase> valid;
  std::vector<Phrase> test;
};

/// Seeded Fisher-Yates shuffle followed by partitioning. Needs at least 10 phrases.
DatasetSplit split_dataset(std::vector<Phrase> phrases, std::uint64_t seed,
                           std::array<int, 3> ratio = {8, 1, 1});

}  // namespace cpdrums
