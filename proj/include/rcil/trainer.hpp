// Copyright 2026 The rcil Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rcil/config.hpp"
#include "rcil/optim.hpp"

namespace rcil {

/// Loss values of one optimizer iteration; unused terms are 0.
struct IterationRecord {
  int step = 0;
  int epoch = 0;
  int iteration = 0;
  Real lr = 0.0;
  Real total = 0.0;
  Real ce = 0.0;
  Real kd = 0.0;
  Real skd = 0.0;
  Real ckd = 0.0;
};

struct EpochRecord {
  int step = 0;
  int epoch = 0;
  Real mean_loss = 0.0;
  /// mIoU over seen classes on the internal holdout; NaN when not evaluated.
  Real holdout_miou = 0.0;
};

struct TrainHistory {
  std::vector<IterationRecord> iterations;
  std::vector<EpochRecord> epochs;
  /// Names of the loss terms that were actually computed ("ce", "unce",
  /// "kd", "unkd", "skd", "ckd", "strip", ...).
  std::set<std::string> executed_terms;
};

/// Where a run stands; enough to continue it bit-identically.
struct TrainState {
  int step_index = 0;
  /// Epochs of `step_index` already completed.
  int epoch = 0;
  OptimizerState optimizer;
  std::vector<std::vector<Real>> velocity;
  std::string rng_state;
  std::uint64_t rng_seed = 0;
};

class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

/// Context for one call of train_step.
struct StepContext {
  const TaskSchedule* schedule = nullptr;
  int step = 0;
  /// Scenes held out from the step's data for the per-epoch metric.
  const std::vector<Scene>* holdout = nullptr;
  /// Called after every epoch with the state needed to resume after it.
  std::function<void(const TrainState&, const StepModel&, const TrainHistory&)> on_epoch;
  /// Resume inside the step from this state (epoch > 0).
  const TrainState* resume = nullptr;
  /// Directory for the diagnostic dump written before a NaN abort.
  std::filesystem::path dump_dir;
};

/// Runs cfg.epochs epochs over `data` and returns the history. The trained
/// network is model.student; the teacher is left untouched.
TrainHistory train_step(StepModel& model, const StepDataset& data,
                        const ExperimentConfig& cfg, Rng& rng, const StepContext& ctx);

/// Loss terms for one batch (exposed for tests and the Python module).
struct BatchLoss {
  Tensor total;
  LossTerms terms;
  std::set<std::string> executed;
};

BatchLoss compute_batch_loss(StepModel& model, const Tensor& images, const LabelMap& labels,
                             const ClassPartition& part, bool first_step,
                             const ExperimentConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Checkpoints.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t config_hash = 0;
  TrainState state;
  /// "student" and, from step 1 on, "teacher".
  std::map<std::string, SegNetwork> networks;
  TrainHistory history;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws when the file is not a checkpoint, has another version, or its
/// config hash differs from `expected_hash` (unless `force`).
Checkpoint load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_hash,
                           bool force = false);

// ---------------------------------------------------------------------------
// Experiments.

inline constexpr int kResultsFormatVersion = 1;

struct StepResult {
  int step = 0;
  IoUReport report;
  std::size_t train_images = 0;
  std::size_t inference_macs = 0;
  std::size_t inference_params = 0;
};

struct ExperimentResult {
  std::string run_id;
  std::filesystem::path run_dir;
  std::vector<StepResult> steps;
  TrainHistory history;
  SegNetwork final_network;
};

struct RunOptions {
  bool resume = true;
  bool force = false;
  bool write_plots = true;
  bool quiet = false;
  /// Called after each epoch's checkpoint has been written.
  std::function<void(int step, int epoch)> on_epoch;
};

/// Trains every step of the schedule and writes
/// <outdir>/<run-id>/{config.resolved, results.csv, curves.csv, history.csv,
/// iou_step<t>.csv, checkpoints/, plots/}.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// results.csv text: one row per step per group (old/new/all).
std::string results_csv(const ExperimentConfig& cfg, const std::vector<StepResult>& steps);
/// curves.csv text: one row per step with the three mIoU values.
std::string curves_csv(const std::vector<StepResult>& steps);
std::string history_csv(const TrainHistory& history);

/// Multiply-accumulates of one merged-network forward on a (1, 3, h, w)
/// input, excluding the classifier head.
std::size_t inference_macs(const SegNetwork& net, int height, int width);

}  // namespace rcil
