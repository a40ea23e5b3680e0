/**
 * @file train.h
 * @brief Optimizer, training loop, evaluation and checkpoints.
 *
 * Checkpoint file, little-endian:
 *   char[4]  magic "CPCK"
 *   u32      version (1)
 *   u32 n, n bytes   JSON header {"config":..., "state":..., "stamp":...}
 *   u32      tensor count
 *   per tensor: u32 n, n bytes name; u32 rows; u32 cols; rows*cols f32 row-major
 * Tensors are the model parameters by name, then "adam.m/<name>" and "adam.v/<name>".
 */

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cpdrums/model.h"
#include "cpdrums/phrase_store.h"
#include "cpdrums/token_dataset.h"

namespace cpdrums::nn {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam with decoupled weight decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
class AdamW {
 public:
  AdamW(Model<float>& model, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);

  void step();
  std::int64_t steps() const { return t_; }
  double lr() const { return lr_; }

  std::vector<Mat<float>>& m() { return m_; }
  std::vector<Mat<float>>& v() { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  std::vector<Param<float>*> params_;
  std::vector<Mat<float>> m_, v_;
  double lr_, wd_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
};

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
double clip_gradients(Model<float>& model, double max_norm);

struct StepResult {
  double loss = 0.0;  // mean per non-PAD position
  int positions = 0;
  double grad_norm = 0.0;
};

/// One optimizer update on `batch`. Dropout masks derive from (seed, step, index in batch),
/// so the result does not depend on evaluation order.
StepResult train_step(Model<float>& model, AdamW& opt, const std::vector<const TokenizedPhrase*>& batch,
                      std::uint64_t seed);

struct EvalResult {
  double loss = 0.0;
  double onset_accuracy = 0.0;  // argmax over non-PAD onset targets
  double drums_accuracy = 0.0;  // argmax over non-PAD drums targets
  int positions = 0;
};

/// Teacher-forced evaluation without dropout.
EvalResult evaluate(Model<float>& model, const std::vector<TokenizedPhrase>& phrases);

struct TrainState {
  std::int64_t step = 0;
  int epoch = 0;       // epoch in progress
  int next_batch = 0;  // first batch of `epoch` not yet trained
  double best_valid = 0.0;
  int best_epoch = -1;
  int bad_epochs = 0;
  std::uint64_t seed = 0;
  bool finished = false;

  bool operator==(const TrainState&) const = default;
};

struct Checkpoint {
  ModelConfig config;
  TrainState state;
  ArtifactStamp stamp;
  std::map<std::string, Mat<float>> tensors;
};

void save_checkpoint(const std::string& path, Model<float>& model, AdamW& opt, const TrainState& state,
                     const ArtifactStamp& stamp);
Checkpoint load_checkpoint(const std::string& path);
/// Copies parameters (and optimizer moments when `opt` is given) from `ckpt`.
void restore(const Checkpoint& ckpt, Model<float>& model, AdamW* opt);

struct TrainOptions {
  std::string out_dir;     // checkpoints and train_log.jsonl
  int max_epochs = 100;
  std::int64_t max_steps = 0;  // 0: no limit
  bool resume = true;          // continue from out_dir/last.ckpt when present
  ArtifactStamp stamp;
  /// Called after every step; returning true stops training (state is checkpointed).
  std::function<bool(const TrainState&, const StepResult&)> on_step;
};

struct TrainSummary {
  TrainState state;
  std::vector<double> step_losses;  // steps run by this call
  std::vector<EvalResult> valid;    // per finished epoch in this call
  std::string best_checkpoint;
  bool early_stopped = false;
};

/// Epoch loop with shuffling, per-epoch validation, checkpoints (epoch-N, last, best) and
/// early stopping after `patience` epochs without validation improvement.
TrainSummary train(Model<float>& model, const std::vector<TokenizedPhrase>& train_set,
                   const std::vector<TokenizedPhrase>& valid_set, std::uint64_t seed, const TrainOptions& opts);

}  // namespace cpdrums::nn
