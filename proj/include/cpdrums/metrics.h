/**
 * @file metrics.h
 * @brief Drum density report and high-level rhythm features.
 *
 * Positions are grid steps. A bar of time signature n/d holds
 * 4n/d * grid steps; onsets off the grid are rejected.
 */

#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpdrums/cosiatec.h"
#include "cpdrums/preprocess.h"

namespace cpdrums {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---- density ---------------------------------------------------------------

struct DensityReport {
  Rational empty_bars_pct{0};
  Rational kick_snares{0};
  Rational hh_rides{0};
  Rational toms{0};
  Rational cymbals{0};

  bool operator==(const DensityReport&) const = default;
};

enum class DensityGroup { KickSnares, HhRides, Toms, Cymbals };
DensityGroup density_group(DrumComponent c);

DensityReport density_report(const std::vector<DrumEvent>& drums, const std::vector<Bar>& bars);

/// Pooled over every bar of every phrase.
DensityReport corpus_density(const std::vector<Phrase>& phrases);

/// Table 2 reference row, training corpus.
inline constexpr std::array<double, 5> kPaperTrainingDensity = {5.91, 5.0588, 5.6203, 0.7919, 0.4902};

// ---- grid helpers ----------------------------------------------------------

int bar_steps(const TimeSignature& ts, int grid);
/// Onset as a grid step; throws MetricError when off the grid.
int to_step(const Rational& onset, int grid);
/// Sorted distinct drum onsets per bar.
std::vector<std::vector<int>> drum_steps_per_bar(const std::vector<DrumEvent>& drums, std::size_t bars,
                                                 int grid);

// ---- symmetry --------------------------------------------------------------

/// Equal adjacent inter-onset-interval pairs over all adjacent pairs; 1 below three onsets.
Rational symmetry(const std::vector<std::int64_t>& sorted_onsets);

/// Symmetry of the distinct drum onsets of a whole phrase.
Rational phrase_symmetry(const Phrase& phrase, int grid);

// ---- syncopation -----------------------------------------------------------

/// Metrical weight per grid step: 0 at the downbeat, one less per subdivision level.
std::vector<int> metrical_weights(const TimeSignature& ts, int grid);

/// Subdivision factors from bar to grid step, e.g. 4/4 at 16ths -> 2 2 2 2.
std::vector<int> subdivision_factors(const TimeSignature& ts, int grid);

/// Unnormalized score of one bar: per note, the strongest silent step after it
/// (up to the next onset or the bar end) minus the note's weight, floored at 0.
int syncopation_score(const std::vector<int>& onsets, const std::vector<int>& weights);

/// Largest score any onset pattern can reach on these weights.
int max_syncopation_score(const std::vector<int>& weights);

/// Single bar, normalized to [0,1].
Rational syncopation(const std::vector<int>& onsets, const TimeSignature& ts, int grid);

/// Sum of bar scores over the sum of bar maxima.
Rational phrase_syncopation(const Phrase& phrase, int grid);

// ---- groove consistency ----------------------------------------------------

enum class GrooveMode {
  Drums,     // drum onsets only
  Union,     // drums, guitar and bass merged into one vector
  PerTrack,  // experimental: mean of the drums, guitar and bass consistencies
};

std::vector<std::vector<bool>> groove_patterns(const Phrase& phrase, int grid, bool include_condition);

/// 1 - hamming/len, or 0 when the lengths differ.
Rational groove_similarity(const std::vector<bool>& a, const std::vector<bool>& b);

/// Mean similarity over consecutive bar pairs. Needs two bars.
Rational groove_consistency(const Phrase& phrase, int grid, GrooveMode mode = GrooveMode::Union);

// ---- pattern rate ----------------------------------------------------------

/// Fraction of drum onsets lying on a grid of `resolution` steps per quarter.
Rational pattern_rate(const std::vector<DrumEvent>& drums, int resolution);

// ---- feature vector and difference report ---------------------------------

inline constexpr std::array<const char*, 5> kFeatureNames = {
    "Compression Ratio", "Symmetry", "Syncopation", "Groove Consistency", "Pattern Rate"};

struct MetricOptions {
  int grid = 4;
  int pattern_resolution = 2;  // 8th notes
  GrooveMode groove_mode = GrooveMode::Union;
};

struct MetricVector {
  Rational compression_ratio{1};
  Rational symmetry{1};
  Rational syncopation{0};
  Rational groove_consistency{1};
  Rational pattern_rate{1};

  std::array<Rational, 5> values() const {
    return {compression_ratio, symmetry, syncopation, groove_consistency, pattern_rate};
  }
  bool operator==(const MetricVector&) const = default;
};

/// Drum events as points: x = step from phrase start, y = component index.
PointSet drum_point_set(const Phrase& phrase, int grid);

Rational compression_ratio_metric(const Phrase& phrase, int grid);

/// All features of a phrase. Groove consistency of a single-bar phrase is 1.
MetricVector compute_metrics(const Phrase& phrase, const MetricOptions& options = {});

struct FeatureStat {
  double mean = 0.0;
  double stddev = 0.0;  // population
};

struct DiffReport {
  std::array<FeatureStat, 5> features{};
  std::array<double, 5> norm{};  // divisor used per feature
  std::size_t pairs = 0;
};

/// Absolute paired differences per feature.
std::vector<std::array<double, 5>> metric_differences(const std::vector<MetricVector>& generated,
                                                      const std::vector<MetricVector>& truth);

/// Largest difference per feature over several systems' difference lists.
std::array<double, 5> diff_norms(const std::vector<std::vector<std::array<double, 5>>>& systems);

/// Mean and stddev of differences divided by `norm` (a zero norm leaves zeros).
DiffReport metric_diff_report(const std::vector<MetricVector>& generated,
                              const std::vector<MetricVector>& truth, const std::array<double, 5>& norm);

/// Normalized by this system's own maxima.
DiffReport metric_diff_report(const std::vector<MetricVector>& generated,
                              const std::vector<MetricVector>& truth);

/// Table 3 reference row: means then stddevs.
inline constexpr std::array<double, 5> kPaperDiffMeans = {7.11, 7.55, 3.76, 1.36, 1.54};
inline constexpr std::array<double, 5> kPaperDiffStddevs = {7.64, 8.12, 4.76, 1.69, 3.86};

// ---- tables ----------------------------------------------------------------

struct DensityRow {
  std::string name;
  std::array<double, 5> values;  // empty %, kick-snares, hh-rides, toms, cymbals
};
std::string render_density_table(const std::vector<DensityRow>& rows);

struct DiffRow {
  std::string name;
  std::array<FeatureStat, 5> stats;  // already scaled for display
};
/// Means with stddevs in parentheses.
std::string render_diff_table(const std::vector<DiffRow>& rows);

DensityRow density_row(const std::string& name, const DensityReport& r);
/// Report scaled by 100 for display.
DiffRow diff_row(const std::string& name, const DiffReport& r);

}  // namespace cpdrums
