/**
 * @file midi.h
 * @brief Standard MIDI File (format 0/1) parsing and writing into a tick-based score model.
 *
 * The score keeps time as integer ticks. Each MIDI channel that carries notes or a
 * program change inside a track chunk becomes its own Track, so a format-0 file with
 * guitar, bass and drums on three channels yields three tracks.
 */

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpdrums/rational.h"

namespace cpdrums {

using Tick = std::int64_t;

enum class TrackRole { Guitar, Bass, Drums, Other };

const char* to_string(TrackRole role);

/// Role from the General MIDI conventions: channel 10 is percussion, programs 25-32
/// are guitars and 33-40 basses (0-based 24-31 and 32-39).
TrackRole role_from_channel_program(int channel, int program);

struct NoteEvent {
  Tick onset_tick = 0;
  Tick duration_ticks = 0;
  int pitch = 0;

  bool operator==(const NoteEvent&) const = default;
  auto operator<=>(const NoteEvent&) const = default;
};

struct Track {
  TrackRole role_hint = TrackRole::Other;
  int channel = 0;  // 0-based; 9 is the percussion channel
  int program = 0;
  std::vector<NoteEvent> notes;  // sorted by (onset, duration, pitch)

  bool operator==(const Track&) const = default;
};

struct TempoChange {
  Tick tick = 0;
  Rational bpm{120};

  bool operator==(const TempoChange&) const = default;
};

struct TimeSignature {
  int numerator = 4;
  int denominator = 4;

  bool operator==(const TimeSignature&) const = default;
  auto operator<=>(const TimeSignature&) const = default;

  /// Bar length in quarter notes.
  Rational quarters() const { return Rational(4 * numerator, denominator); }
};

std::string to_string(const TimeSignature& ts);

struct TimeSignatureChange {
  Tick tick = 0;
  TimeSignature ts;

  bool operator==(const TimeSignatureChange&) const = default;
};

struct Score {
  int ticks_per_quarter = 480;
  std::vector<Track> tracks;
  std::vector<TempoChange> tempo_map;       // sorted, unique ticks, entry at tick 0
  std::vector<TimeSignatureChange> ts_map;  // sorted, unique ticks, entry at tick 0

  bool operator==(const Score&) const = default;

  Rational tempo_at(Tick tick) const;
  TimeSignature ts_at(Tick tick) const;
};

class MidiParseError : public std::runtime_error {
 public:
  MidiParseError(const std::string& what, std::size_t offset);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class MidiWriteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParseResult {
  Score score;
  std::vector<std::string> warnings;
};

/// Parses a format-0 or format-1 file. Dangling note-ons are closed at the end of their
/// track chunk and reported as warnings. Throws MidiParseError with the byte offset of
/// the first malformed structure.
ParseResult parse_midi(std::span<const std::uint8_t> bytes);

/// Writes a format-1 file: a conductor chunk with the tempo and time-signature maps
/// followed by one chunk per track.
std::vector<std::uint8_t> write_midi(const Score& score);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

/// Snaps onsets and note ends to the nearest multiple of `grid` ticks (ties toward the
/// earlier step). Non-drum notes keep a minimum length of one step.
Score quantize(const Score& score, Tick grid);

/// Sorts notes canonically and normalizes the tempo/TS maps (defaults at tick 0,
/// duplicate ticks resolved to the last entry).
void normalize(Score& score);

}  // namespace cpdrums
