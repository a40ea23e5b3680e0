// make_toy_corpus: writes the small bundled MIDI corpus used by the examples and tests.
//
//   make_toy_corpus [out_dir]     (default data/toy_corpus)
//
// 20 files, 24 bars each: guitar, bass and drums, except toy_19 which has no bass track.
// toy_07 also carries cowbell hits, which preprocessing drops.

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cpdrums/midi.h"

using namespace cpdrums;

namespace {

constexpr int kTpq = 480;
constexpr int kBars = 24;

struct Style {
  TimeSignature ts;
  std::vector<int> kick, snare, hat;  // 8th-note slots within the bar
  int hat_pitch;
};

const std::vector<Style>& styles() {
  static const std::vector<Style> s = {
      {{4, 4}, {0, 4}, {2, 6}, {0, 1, 2, 3, 4, 5, 6, 7}, 42},
      {{4, 4}, {0, 3, 4}, {2, 6}, {0, 2, 4, 6}, 42},
      {{4, 4}, {0, 5}, {4}, {0, 2, 4, 6}, 51},
      {{4, 4}, {0, 2, 4, 6}, {2, 6}, {1, 3, 5, 7}, 46},
      {{3, 4}, {0}, {2, 4}, {0, 2, 4}, 42},
      {{6, 8}, {0}, {3}, {0, 1, 2, 3, 4, 5}, 42},
  };
  return s;
}

void add(Track& t, Tick on, Tick dur, int pitch) { t.notes.push_back({on, dur, pitch}); }

Score make_piece(int index) {
  std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(index));
  const auto& style = styles()[static_cast<std::size_t>(index) % styles().size()];
  const Tick eighth = kTpq / 2;
  const Tick bar_len = static_cast<Tick>(style.ts.numerator) * 4 * kTpq / style.ts.denominator;
  const int slots = static_cast<int>(bar_len / eighth);
  const int bpm = 90 + 5 * static_cast<int>(rng() % 13);

  Score s;
  s.ticks_per_quarter = kTpq;
  s.tempo_map.push_back({0, Rational(bpm)});
  s.ts_map.push_back({0, style.ts});
  Track guitar{TrackRole::Guitar, 0, 25, {}};
  Track bass{TrackRole::Bass, 1, 33, {}};
  Track drums{TrackRole::Drums, 9, 0, {}};

  const std::vector<int> roots = {40, 45, 43, 38, 47, 41};
  for (int b = 0; b < kBars; ++b) {
    const Tick start = b * bar_len;
    const int root = roots[static_cast<std::size_t>((index + b / 2) % roots.size())];
    const bool fill = b % 4 == 3 && rng() % 2 == 0;
    for (int k : style.kick) {
      if (fill && k >= slots / 2) continue;
      add(drums, start + k * eighth, kTpq / 4, 36);
      add(bass, start + k * eighth, eighth, root);
    }
    for (int k : style.snare) {
      if (fill && k >= slots / 2) continue;
      add(drums, start + k * eighth, kTpq / 4, 38);
      add(guitar, start + k * eighth, eighth, root + 24);
      add(guitar, start + k * eighth, eighth, root + 28);
      add(guitar, start + k * eighth, eighth, root + 31);
    }
    for (int k : style.hat) {
      if (fill && k >= slots / 2) continue;
      add(drums, start + k * eighth, kTpq / 4, style.hat_pitch);
    }
    if (b % 4 == 0) add(drums, start, kTpq / 4, 49);
    if (fill) {
      const int toms[] = {48, 45, 43};
      for (int k = slots / 2, i = 0; k < slots; ++k, ++i) add(drums, start + k * eighth, kTpq / 4, toms[i % 3]);
      add(guitar, start + (slots / 2) * eighth, bar_len / 2, root + 24);
    }
    if (index == 7) add(drums, start + eighth, kTpq / 4, 56);
    if (rng() % 3 == 0) add(bass, start + (slots - 1) * eighth, eighth, root + 7);
  }
  s.tracks = {std::move(guitar), std::move(drums)};
  if (index != 19) s.tracks.insert(s.tracks.begin() + 1, std::move(bass));
  normalize(s);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : "data/toy_corpus";
  std::filesystem::create_directories(out);
  for (int i = 0; i < 20; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "toy_%02d.mid", i);
    write_file_bytes((out / name).string(), write_midi(make_piece(i)));
  }
  std::printf("wrote 20 files to %s\n", out.string().c_str());
  return 0;
}
