/**
 * @file pipeline.h
 * @brief Stage orchestration behind the command-line tool.
 *
 * Work directory layout:
 *   phrases/{train,valid,test}.jsonl   phrase stores
 *   splits.json                        source ids per split
 *   preprocess_stats.json, preprocess.log
 *   vocab.json
 *   tokens/{train,valid,test}.cptk
 *   checkpoints/                       epoch-N, last, best, train_log.jsonl
 *   generated/<id>.{mid,tokens.json,phrase.json}, truth/<id>.phrase.json
 *   reports/evaluation.{json,txt}, reports/metrics.json
 *
 * Data artifacts carry the data hash (filter, codec and split settings); checkpoints and
 * reports carry the run hash (the whole effective config without paths). Both carry the seed.
 */

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpdrums/metrics.h"
#include "cpdrums/model.h"
#include "cpdrums/phrase_store.h"
#include "cpdrums/vocab.h"

namespace cpdrums {

class PipelineError : public std::runtime_error {
 public:
  PipelineError(const std::string& stage, const std::string& what)
      : std::runtime_error(what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RunConfig {
  std::filesystem::path corpus_dir;
  std::filesystem::path work_dir;
  CorpusFilterConfig filter;
  CodecOptions codec;
  std::array<int, 3> split{8, 1, 1};
  nn::ModelConfig model;  // vocabulary sizes unset
  std::uint64_t seed = 1;
  int max_epochs = 100;
  std::int64_t max_steps = 0;
  nn::Temperature temperature;  // evaluation default: fixed 1.0
  MetricOptions metrics;
  int generate_limit = 0;  // 0: every seed phrase

  /// Effective settings without paths.
  nlohmann::ordered_json to_json() const;
  std::string data_hash() const;
  std::string run_hash() const;
};

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
  std::optional<std::string> tau;  // number or "uniform"
};

/// Relative paths in the file resolve against the file's directory.
RunConfig load_run_config(const std::string& path, const ConfigOverrides& overrides = {});
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base,
                               const ConfigOverrides& overrides = {});

nn::Temperature parse_temperature(const std::string& text);

// ---- stages ----------------------------------------------------------------

struct PreprocessStats {
  int files = 0;
  int used_files = 0;
  std::map<std::string, std::string> skipped;  // file -> reason
  int phrases_segmented = 0;
  int phrases_kept = 0;
  std::array<std::size_t, 3> split_counts{};
  int dropped_drum_notes = 0;
  std::map<int, int> dropped_by_pitch;
  std::map<std::string, int> ts_histogram;  // per kept bar

  nlohmann::ordered_json to_json() const;
};

PreprocessStats run_preprocess(const RunConfig& cfg);
VocabPair run_vocab(const RunConfig& cfg);
void run_tokenize(const RunConfig& cfg);

struct TrainReport {
  std::int64_t steps = 0;
  int epochs = 0;
  double best_valid = 0.0;
  int best_epoch = -1;
  bool early_stopped = false;
  std::string best_checkpoint;
};
TrainReport run_train(const RunConfig& cfg);

struct GenerateReport {
  std::vector<std::string> source_ids;
  std::vector<double> taus;
  std::filesystem::path generated_dir;
  std::filesystem::path truth_dir;
};
/// Seeds are the phrases of `split`; an empty checkpoint means checkpoints/best.ckpt.
GenerateReport run_generate(const RunConfig& cfg, const std::string& checkpoint = {},
                            const std::string& split = "test");

struct EvaluationBundle {
  std::vector<std::string> source_ids;  // paired
  std::vector<std::string> unpaired;
  std::vector<MetricVector> generated;
  std::vector<MetricVector> truth;
  DensityReport generated_density;
  DensityReport truth_density;
  DiffReport diff;
  std::string density_table;
  std::string diff_table;

  nlohmann::ordered_json to_json() const;
};
/// Pairs `<id>.phrase.json` files by source id.
EvaluationBundle run_evaluate(const RunConfig& cfg, const std::filesystem::path& generated_dir,
                              const std::filesystem::path& truth_dir);

/// Metrics of every phrase in a phrase store or directory of phrase files.
nlohmann::ordered_json run_metrics(const RunConfig& cfg, const std::filesystem::path& input);

// ---- helpers ---------------------------------------------------------------

/// Phrases of one file, as preprocessing produces them. Throws MissingRoleError.
std::vector<Phrase> phrases_from_score(const Score& score, const std::string& source_id,
                                       const CorpusFilterConfig& filter, int grid,
                                       DrumMapResult* drum_map = nullptr);

/// Three tracks in guitar, bass, drums order. Phrases keep rhythm only, so guitar and
/// bass pitches are placeholders: the lowest free pitches of a range, three for a chord.
Score phrase_to_score(const Phrase& phrase, int ticks_per_quarter = 480);

/// File-name-safe form of a source id.
std::string file_stem(const std::string& source_id);

nlohmann::ordered_json stamp_json(const ArtifactStamp& stamp);

void write_phrase_file(const std::filesystem::path& path, const Phrase& phrase, const ArtifactStamp& stamp);
Phrase read_phrase_file(const std::filesystem::path& path);

}  // namespace cpdrums
