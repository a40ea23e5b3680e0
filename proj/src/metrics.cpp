/**
 * @file metrics.cpp
 * @brief Density report, symmetry, syncopation, groove consistency, pattern rate,
 *        difference report and table rendering.
 */

#include "cpdrums/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace cpdrums {

DensityGroup density_group(DrumComponent c) {
  switch (c) {
    case DrumComponent::Kick:
    case DrumComponent::Snare:
    case DrumComponent::SideStick:
      return DensityGroup::KickSnares;
    case DrumComponent::ClosedHihat:
    case DrumComponent::OpenHihat:
    case DrumComponent::RideBell:
    case DrumComponent::RideCymbal:
      return DensityGroup::HhRides;
    case DrumComponent::TomHigh:
    case DrumComponent::TomMid:
    case DrumComponent::TomLow:
      return DensityGroup::Toms;
    case DrumComponent::Crash1:
    case DrumComponent::Crash2:
    case DrumComponent::China:
      return DensityGroup::Cymbals;
  }
  throw MetricError("unknown drum component");
}

namespace {

struct DensityCounts {
  std::int64_t bars = 0;
  std::int64_t empty = 0;
  std::array<std::int64_t, 4> groups{};

  void add(const std::vector<DrumEvent>& drums, std::size_t nbars) {
    std::vector<bool> used(nbars, false);
    for (const auto& d : drums) {
      if (d.bar < 0 || static_cast<std::size_t>(d.bar) >= nbars) {
        throw MetricError("drum event outside the phrase's bars");
      }
      used[static_cast<std::size_t>(d.bar)] = true;
      ++groups[static_cast<std::size_t>(density_group(d.component))];
    }
    bars += static_cast<std::int64_t>(nbars);
    empty += std::count(used.begin(), used.end(), false);
  }

  DensityReport report() const {
    if (bars == 0) throw MetricError("density report needs at least one bar");
    DensityReport r;
    r.empty_bars_pct = Rational(100 * empty, bars);
    r.kick_snares = Rational(groups[0], bars);
    r.hh_rides = Rational(groups[1], bars);
    r.toms = Rational(groups[2], bars);
    r.cymbals = Rational(groups[3], bars);
    return r;
  }
};

}  // namespace

DensityReport density_report(const std::vector<DrumEvent>& drums, const std::vector<Bar>& bars) {
  DensityCounts c;
  c.add(drums, bars.size());
  return c.report();
}

DensityReport corpus_density(const std::vector<Phrase>& phrases) {
  DensityCounts c;
  for (const auto& p : phrases) c.add(p.drums, p.bars.size());
  return c.report();
}

int bar_steps(const TimeSignature& ts, int grid) {
  const Rational s = ts.quarters() * grid;
  if (s.denominator() != 1 || s <= Rational(0)) {
    throw MetricError("time signature " + to_string(ts) + " does not fill whole grid steps");
  }
  return static_cast<int>(s.numerator());
}

int to_step(const Rational& onset, int grid) {
  const Rational s = onset * grid;
  if (s.denominator() != 1) throw MetricError("onset " + to_string(onset) + " is off the grid");
  return static_cast<int>(s.numerator());
}

std::vector<std::vector<int>> drum_steps_per_bar(const std::vector<DrumEvent>& drums, std::size_t bars,
                                                 int grid) {
  std::vector<std::set<int>> sets(bars);
  for (const auto& d : drums) {
    if (d.bar < 0 || static_cast<std::size_t>(d.bar) >= bars) {
      throw MetricError("drum event outside the phrase's bars");
    }
    sets[static_cast<std::size_t>(d.bar)].insert(to_step(d.onset, grid));
  }
  std::vector<std::vector<int>> out;
  for (const auto& s : sets) out.emplace_back(s.begin(), s.end());
  return out;
}

Rational symmetry(const std::vector<std::int64_t>& onsets) {
  if (onsets.size() < 3) return Rational(1);
  std::int64_t equal = 0;
  const auto pairs = static_cast<std::int64_t>(onsets.size() - 2);
  for (std::size_t i = 2; i < onsets.size(); ++i) {
    if (onsets[i] - onsets[i - 1] == onsets[i - 1] - onsets[i - 2]) ++equal;
  }
  return Rational(equal, pairs);
}

Rational phrase_symmetry(const Phrase& phrase, int grid) {
  const auto per_bar = drum_steps_per_bar(phrase.drums, phrase.bars.size(), grid);
  std::vector<std::int64_t> onsets;
  std::int64_t start = 0;
  for (std::size_t b = 0; b < phrase.bars.size(); ++b) {
    for (const int s : per_bar[b]) onsets.push_back(start + s);
    start += bar_steps(phrase.bars[b].ts, grid);
  }
  return symmetry(onsets);
}

namespace {

void push_prime_factors(int n, std::vector<int>& out, const std::string& what) {
  for (const int p : {2, 3, 5, 7}) {
    while (n % p == 0) {
      out.push_back(p);
      n /= p;
    }
  }
  if (n != 1) throw MetricError("no metrical subdivision for " + what);
}

}  // namespace

std::vector<int> subdivision_factors(const TimeSignature& ts, int grid) {
  const int steps = bar_steps(ts, grid);
  const bool compound = ts.denominator >= 8 && ts.numerator % 3 == 0 && ts.numerator > 3;
  const int beats = compound ? ts.numerator / 3 : ts.numerator;
  std::vector<int> factors;
  push_prime_factors(beats, factors, "time signature " + to_string(ts));
  if (compound) factors.push_back(3);
  int above = 1;
  for (const int f : factors) above *= f;
  if (steps % above != 0) {
    throw MetricError("grid " + std::to_string(grid) + " is too coarse for " + to_string(ts));
  }
  int rest = steps / above;
  while (rest % 3 == 0) {
    factors.push_back(3);
    rest /= 3;
  }
  while (rest % 2 == 0) {
    factors.push_back(2);
    rest /= 2;
  }
  if (rest != 1) {
    throw MetricError("grid " + std::to_string(grid) + " does not subdivide " + to_string(ts) +
                      " into duple or triple levels");
  }
  return factors;
}

std::vector<int> metrical_weights(const TimeSignature& ts, int grid) {
  const int steps = bar_steps(ts, grid);
  const auto factors = subdivision_factors(ts, grid);
  std::vector<int> w(static_cast<std::size_t>(steps), -static_cast<int>(factors.size()));
  int stride = steps;
  w[0] = 0;
  for (std::size_t level = 0; level < factors.size(); ++level) {
    stride /= factors[level];
    for (int p = stride; p < steps; p += stride) {
      w[static_cast<std::size_t>(p)] = std::max(w[static_cast<std::size_t>(p)], -static_cast<int>(level + 1));
    }
  }
  return w;
}

namespace {

/// Gain of a note at i whose silent span runs to j (exclusive).
int note_gain(const std::vector<int>& w, int i, int j) {
  int best = 0;
  for (int k = i + 1; k < j; ++k) best = std::max(best, w[static_cast<std::size_t>(k)] - w[static_cast<std::size_t>(i)]);
  return best;
}

}  // namespace

int syncopation_score(const std::vector<int>& onsets, const std::vector<int>& weights) {
  const int len = static_cast<int>(weights.size());
  int total = 0;
  for (std::size_t k = 0; k < onsets.size(); ++k) {
    const int i = onsets[k];
    if (i < 0 || i >= len) throw MetricError("onset step outside the bar");
    if (k > 0 && onsets[k - 1] >= i) throw MetricError("onsets must be strictly increasing");
    const int j = k + 1 < onsets.size() ? onsets[k + 1] : len;
    total += note_gain(weights, i, j);
  }
  return total;
}

int max_syncopation_score(const std::vector<int>& weights) {
  const int len = static_cast<int>(weights.size());
  std::vector<int> best(static_cast<std::size_t>(len), 0);  // best score of a suffix starting with a note at i
  int overall = 0;
  for (int i = len - 1; i >= 0; --i) {
    int b = note_gain(weights, i, len);
    for (int j = i + 1; j < len; ++j) b = std::max(b, note_gain(weights, i, j) + best[static_cast<std::size_t>(j)]);
    best[static_cast<std::size_t>(i)] = b;
    overall = std::max(overall, b);
  }
  return overall;
}

Rational syncopation(const std::vector<int>& onsets, const TimeSignature& ts, int grid) {
  const auto w = metrical_weights(ts, grid);
  const int max = max_syncopation_score(w);
  if (max == 0) return Rational(0);
  return Rational(syncopation_score(onsets, w), max);
}

Rational phrase_syncopation(const Phrase& phrase, int grid) {
  const auto per_bar = drum_steps_per_bar(phrase.drums, phrase.bars.size(), grid);
  std::int64_t score = 0, max = 0;
  for (std::size_t b = 0; b < phrase.bars.size(); ++b) {
    const auto w = metrical_weights(phrase.bars[b].ts, grid);
    score += syncopation_score(per_bar[b], w);
    max += max_syncopation_score(w);
  }
  return max == 0 ? Rational(0) : Rational(score, max);
}

namespace {

enum TrackMask { kDrums = 1, kGuitar = 2, kBass = 4 };

std::vector<std::vector<bool>> patterns_for(const Phrase& phrase, int grid, int mask) {
  std::vector<std::vector<bool>> out;
  for (const auto& b : phrase.bars) out.emplace_back(static_cast<std::size_t>(bar_steps(b.ts, grid)), false);
  auto mark = [&](int bar, const Rational& onset) {
    if (bar < 0 || static_cast<std::size_t>(bar) >= out.size()) throw MetricError("event outside the phrase's bars");
    const int s = to_step(onset, grid);
    auto& v = out[static_cast<std::size_t>(bar)];
    if (s < 0 || static_cast<std::size_t>(s) >= v.size()) throw MetricError("onset outside its bar");
    v[static_cast<std::size_t>(s)] = true;
  };
  if (mask & kDrums) {
    for (const auto& d : phrase.drums) mark(d.bar, d.onset);
  }
  if (mask & kGuitar) {
    for (const auto& e : phrase.guitar) mark(e.bar, e.onset);
  }
  if (mask & kBass) {
    for (const auto& e : phrase.bass) mark(e.bar, e.onset);
  }
  return out;
}

Rational mean_consecutive_similarity(const std::vector<std::vector<bool>>& pats) {
  Rational sum(0);
  for (std::size_t i = 1; i < pats.size(); ++i) sum += groove_similarity(pats[i - 1], pats[i]);
  return sum / static_cast<std::int64_t>(pats.size() - 1);
}

}  // namespace

std::vector<std::vector<bool>> groove_patterns(const Phrase& phrase, int grid, bool include_condition) {
  return patterns_for(phrase, grid, include_condition ? (kDrums | kGuitar | kBass) : kDrums);
}

Rational groove_similarity(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size() || a.empty()) return Rational(0);
  std::int64_t hamming = 0;
  for (std::size_t i = 0; i < a.size(); ++i) hamming += a[i] != b[i];
  return Rational(1) - Rational(hamming, static_cast<std::int64_t>(a.size()));
}

Rational groove_consistency(const Phrase& phrase, int grid, GrooveMode mode) {
  if (phrase.bars.size() < 2) throw MetricError("groove consistency needs at least two bars");
  switch (mode) {
    case GrooveMode::Drums:
      return mean_consecutive_similarity(patterns_for(phrase, grid, kDrums));
    case GrooveMode::Union:
      return mean_consecutive_similarity(patterns_for(phrase, grid, kDrums | kGuitar | kBass));
    case GrooveMode::PerTrack: {
      Rational sum(0);
      for (const int m : {kDrums, kGuitar, kBass}) sum += mean_consecutive_similarity(patterns_for(phrase, grid, m));
      return sum / 3;
    }
  }
  throw MetricError("unknown groove mode");
}

Rational pattern_rate(const std::vector<DrumEvent>& drums, int resolution) {
  if (resolution <= 0) throw MetricError("pattern rate resolution must be positive");
  if (drums.empty()) throw MetricError("pattern rate needs at least one drum note");
  std::int64_t on = 0;
  for (const auto& d : drums) on += (d.onset * resolution).denominator() == 1;
  return Rational(on, static_cast<std::int64_t>(drums.size()));
}

PointSet drum_point_set(const Phrase& phrase, int grid) {
  std::vector<std::int64_t> starts;
  std::int64_t start = 0;
  for (const auto& b : phrase.bars) {
    starts.push_back(start);
    start += bar_steps(b.ts, grid);
  }
  std::vector<Point> pts;
  for (const auto& d : phrase.drums) {
    if (d.bar < 0 || static_cast<std::size_t>(d.bar) >= starts.size()) {
      throw MetricError("drum event outside the phrase's bars");
    }
    pts.push_back({starts[static_cast<std::size_t>(d.bar)] + to_step(d.onset, grid),
                   static_cast<std::int64_t>(d.component)});
  }
  return make_point_set(std::move(pts));
}

Rational compression_ratio_metric(const Phrase& phrase, int grid) {
  if (phrase.drums.empty()) throw MetricError("compression ratio needs at least one drum event");
  return cosiatec(drum_point_set(phrase, grid)).ratio;
}

MetricVector compute_metrics(const Phrase& phrase, const MetricOptions& options) {
  MetricVector m;
  if (!phrase.drums.empty()) {
    m.compression_ratio = compression_ratio_metric(phrase, options.grid);
    m.pattern_rate = pattern_rate(phrase.drums, options.pattern_resolution);
  }
  m.symmetry = phrase_symmetry(phrase, options.grid);
  m.syncopation = phrase_syncopation(phrase, options.grid);
  if (phrase.bars.size() >= 2) m.groove_consistency = groove_consistency(phrase, options.grid, options.groove_mode);
  return m;
}

std::vector<std::array<double, 5>> metric_differences(const std::vector<MetricVector>& generated,
                                                      const std::vector<MetricVector>& truth) {
  if (generated.size() != truth.size()) {
    throw MetricError("generated and truth lists differ in length (" + std::to_string(generated.size()) +
                      " vs " + std::to_string(truth.size()) + ")");
  }
  std::vector<std::array<double, 5>> out;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto g = generated[i].values();
    const auto t = truth[i].values();
    std::array<double, 5> d{};
    for (std::size_t f = 0; f < 5; ++f) d[f] = std::abs(to_double(g[f] - t[f]));
    out.push_back(d);
  }
  return out;
}

std::array<double, 5> diff_norms(const std::vector<std::vector<std::array<double, 5>>>& systems) {
  std::array<double, 5> norm{};
  for (const auto& s : systems) {
    for (const auto& d : s) {
      for (std::size_t f = 0; f < 5; ++f) norm[f] = std::max(norm[f], d[f]);
    }
  }
  return norm;
}

DiffReport metric_diff_report(const std::vector<MetricVector>& generated, const std::vector<MetricVector>& truth,
                              const std::array<double, 5>& norm) {
  const auto diffs = metric_differences(generated, truth);
  DiffReport r;
  r.norm = norm;
  r.pairs = diffs.size();
  if (diffs.empty()) return r;
  const auto n = static_cast<double>(diffs.size());
  for (std::size_t f = 0; f < 5; ++f) {
    auto scaled = [&](const std::array<double, 5>& d) { return norm[f] > 0 ? d[f] / norm[f] : 0.0; };
    double mean = 0;
    for (const auto& d : diffs) mean += scaled(d);
    mean /= n;
    double var = 0;
    for (const auto& d : diffs) var += (scaled(d) - mean) * (scaled(d) - mean);
    r.features[f] = {mean, std::sqrt(var / n)};
  }
  return r;
}

DiffReport metric_diff_report(const std::vector<MetricVector>& generated, const std::vector<MetricVector>& truth) {
  return metric_diff_report(generated, truth, diff_norms({metric_differences(generated, truth)}));
}

namespace {

std::string fmt(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string render(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out << " | ";
      out << cells[c] << std::string(width[c] - cells[c].size(), ' ');
    }
    out << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (const auto w : width) total += w;
  out << std::string(total + 3 * (width.size() - 1), '-') << '\n';
  for (const auto& r : rows) line(r);
  return out.str();
}

}  // namespace

DensityRow density_row(const std::string& name, const DensityReport& r) {
  return {name,
          {to_double(r.empty_bars_pct), to_double(r.kick_snares), to_double(r.hh_rides), to_double(r.toms),
           to_double(r.cymbals)}};
}

DiffRow diff_row(const std::string& name, const DiffReport& r) {
  DiffRow row{name, {}};
  for (std::size_t f = 0; f < 5; ++f) row.stats[f] = {100 * r.features[f].mean, 100 * r.features[f].stddev};
  return row;
}

std::string render_density_table(const std::vector<DensityRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    cells.push_back({r.name, fmt(r.values[0], 2), fmt(r.values[1], 4), fmt(r.values[2], 4), fmt(r.values[3], 4),
                     fmt(r.values[4], 4)});
  }
  return render({"", "Empty Bars", "Kick-Snares", "HH-Rides", "Toms", "Cymbals"}, cells);
}

std::string render_diff_table(const std::vector<DiffRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    std::vector<std::string> c = {r.name};
    for (const auto& s : r.stats) c.push_back(fmt(s.mean, 2) + " (" + fmt(s.stddev, 2) + ")");
    cells.push_back(std::move(c));
  }
  std::vector<std::string> header = {""};
  for (const auto* n : kFeatureNames) header.emplace_back(n);
  return render(header, cells);
}

}  // namespace cpdrums
