#include <doctest.h>

#include <random>

#include "cpdrums/midi.h"
#include "test_support.h"

using namespace cpdrums;

namespace {

std::vector<std::uint8_t> with_track(std::vector<std::uint8_t> header, std::vector<std::uint8_t> body) {
  header.insert(header.end(), {'M', 'T', 'r', 'k'});
  const auto n = static_cast<std::uint32_t>(body.size());
  header.insert(header.end(), {static_cast<std::uint8_t>(n >> 24), static_cast<std::uint8_t>(n >> 16),
                               static_cast<std::uint8_t>(n >> 8), static_cast<std::uint8_t>(n)});
  header.insert(header.end(), body.begin(), body.end());
  return header;
}

const std::vector<std::uint8_t> kFormat0Tpq96 = {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1, 0, 0x60};

}  // namespace

TEST_CASE("file without note events parses to an empty score with default maps") {
  const auto bytes = with_track(kFormat0Tpq96, {0x00, 0xFF, 0x2F, 0x00});
  const auto r = parse_midi(bytes);
  CHECK(r.score.tracks.empty());
  CHECK(r.score.ticks_per_quarter == 96);
  REQUIRE(r.score.tempo_map.size() == 1);
  CHECK(r.score.tempo_map[0].tick == 0);
  CHECK(r.score.tempo_map[0].bpm == Rational(120));
  REQUIRE(r.score.ts_map.size() == 1);
  CHECK(r.score.ts_map[0].ts == TimeSignature{4, 4});
}

TEST_CASE("hand-assembled two-note file with running status and both note-off forms") {
  const auto bytes = with_track(kFormat0Tpq96, {
                                                   0x00, 0xC0, 0x19,              // program 25
                                                   0x00, 0x90, 0x3C, 0x64,        // on 60 @0
                                                   0x60, 0x3C, 0x00,              // running: off 60 @96
                                                   0x00, 0x40, 0x64,              // running: on 64 @96
                                                   0x83, 0x00, 0x80, 0x40, 0x40,  // off 64 @480
                                                   0x00, 0xFF, 0x2F, 0x00,
                                               });
  const auto r = parse_midi(bytes);
  REQUIRE(r.score.tracks.size() == 1);
  const auto& t = r.score.tracks[0];
  CHECK(t.role_hint == TrackRole::Guitar);
  CHECK(t.program == 25);
  REQUIRE(t.notes.size() == 2);
  CHECK(t.notes[0] == NoteEvent{0, 96, 60});
  CHECK(t.notes[1] == NoteEvent{96, 384, 64});
  CHECK(r.warnings.empty());
}

TEST_CASE("dangling note-on is closed at the end of its track with a warning") {
  const auto bytes = with_track(kFormat0Tpq96, {0x00, 0x99, 0x24, 0x64, 0x81, 0x40, 0xFF, 0x2F, 0x00});
  const auto r = parse_midi(bytes);
  REQUIRE(r.score.tracks.size() == 1);
  CHECK(r.score.tracks[0].role_hint == TrackRole::Drums);
  CHECK(r.score.tracks[0].notes[0] == NoteEvent{0, 192, 36});
  CHECK(r.warnings.size() == 1);
}

TEST_CASE("malformed input reports a byte offset") {
  std::vector<std::uint8_t> bad = {'M', 'T', 'h', 'x', 0, 0, 0, 6, 0, 0, 0, 1, 0, 0x60};
  try {
    parse_midi(bad);
    FAIL("expected a parse error");
  } catch (const MidiParseError& e) {
    CHECK(e.offset() == 0);
  }
  auto truncated = with_track(kFormat0Tpq96, {0x00, 0x90, 0x3C});
  CHECK_THROWS_AS(parse_midi(truncated), MidiParseError);

  auto long_chunk = with_track(kFormat0Tpq96, {0x00, 0xFF, 0x2F, 0x00});
  long_chunk[18] = 0x7F;  // chunk length far beyond the file
  try {
    parse_midi(long_chunk);
    FAIL("expected a parse error");
  } catch (const MidiParseError& e) {
    CHECK(e.offset() == 18);
  }
  std::vector<std::uint8_t> format2 = kFormat0Tpq96;
  format2[9] = 2;
  CHECK_THROWS_AS(parse_midi(format2), MidiParseError);
}

TEST_CASE("parsing is total over mutated files") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 300; ++i) {
    auto bytes = write_midi(testing::random_score(rng));
    const int flips = testing::uniform_int(rng, 1, 6);
    for (int f = 0; f < flips; ++f) {
      bytes[rng() % bytes.size()] = static_cast<std::uint8_t>(rng());
    }
    if (testing::uniform_int(rng, 0, 3) == 0) bytes.resize(rng() % bytes.size());
    try {
      parse_midi(bytes);
    } catch (const MidiParseError&) {
    }
  }
}

TEST_CASE("empty score writes a minimal valid file") {
  Score s;
  normalize(s);
  const auto bytes = write_midi(s);
  CHECK(std::equal(bytes.begin(), bytes.begin() + 4, "MThd"));
  const auto back = parse_midi(bytes).score;
  CHECK(back == s);
}

TEST_CASE("one-bar kick pattern round-trips") {
  Score s;
  s.ticks_per_quarter = 480;
  Track kick;
  kick.channel = 9;
  kick.role_hint = TrackRole::Drums;
  for (int q = 0; q < 4; ++q) kick.notes.push_back({q * 480, 0, 36});
  s.tracks.push_back(kick);
  normalize(s);
  CHECK(parse_midi(write_midi(s)).score == s);
}

TEST_CASE("mid-piece tempo change writes two tempo events at the right ticks") {
  Score s;
  s.tempo_map = {{0, Rational(120)}, {1920, Rational(150)}};
  normalize(s);
  const auto bytes = write_midi(s);
  int tempo_events = 0;
  for (std::size_t i = 0; i + 2 < bytes.size(); ++i) {
    if (bytes[i] == 0xFF && bytes[i + 1] == 0x51 && bytes[i + 2] == 0x03) ++tempo_events;
  }
  CHECK(tempo_events == 2);
  const auto back = parse_midi(bytes).score;
  REQUIRE(back.tempo_map.size() == 2);
  CHECK(back.tempo_map[1].tick == 1920);
  CHECK(back.tempo_map[1].bpm == Rational(150));
}

TEST_CASE("unrepresentable time signature is a write error") {
  Score s;
  s.ts_map = {{0, TimeSignature{4, 3}}};
  CHECK_THROWS_AS(write_midi(s), MidiWriteError);
}

TEST_CASE("random quantized scores round-trip tick-exactly") {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 100; ++i) {
    const auto s = testing::random_score(rng);
    CHECK(parse_midi(write_midi(s)).score == s);
  }
}

TEST_CASE("quantize snaps to the nearest step, ties down") {
  Score s;
  s.ticks_per_quarter = 100;
  Track g;
  g.program = 25;
  g.role_hint = TrackRole::Guitar;
  g.notes = {{15, 50, 60}, {12, 25, 61}, {0, 3, 62}};  // grid 25: 0.6 step, tie, short
  s.tracks.push_back(g);
  const auto q = quantize(s, 25);
  const auto& n = q.tracks[0].notes;
  CHECK(n[0] == NoteEvent{0, 25, 61});   // 12 -> 0 (12/25 < 1/2), end 37 -> 25
  CHECK(n[1] == NoteEvent{0, 25, 62});   // end 3 snaps to 0, kept one step long
  CHECK(n[2] == NoteEvent{25, 50, 60});  // 15 -> 25, end 65 -> 75
  CHECK(quantize(q, 25) == q);

  Track tie;
  tie.program = 25;
  tie.role_hint = TrackRole::Guitar;
  tie.notes = {{50, 100, 60}};
  Score t;
  t.ticks_per_quarter = 100;
  t.tracks.push_back(tie);
  CHECK(quantize(t, 100).tracks[0].notes[0].onset_tick == 0);  // exactly half a step

  CHECK_THROWS(quantize(s, 0));
}

TEST_CASE("quantize is idempotent and moves onsets at most half a step") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    auto s = testing::random_score(rng, 16);
    for (auto& t : s.tracks) {
      for (auto& n : t.notes) n.onset_tick += testing::uniform_int(rng, 0, 40);
    }
    const Tick grid = s.ticks_per_quarter / 4;
    const auto q = quantize(s, grid);
    CHECK(quantize(q, grid) == q);
    for (std::size_t t = 0; t < s.tracks.size(); ++t) {
      std::multiset<Tick> before, after;
      for (const auto& n : s.tracks[t].notes) before.insert(n.onset_tick);
      for (const auto& n : q.tracks[t].notes) after.insert(n.onset_tick);
      auto a = after.begin();
      for (const Tick b : before) {
        CHECK(std::abs(*a - b) <= grid / 2);
        ++a;
      }
    }
  }
}
