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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rcil/cl_losses.hpp"
#include "rcil/tensor.hpp"

namespace rcil {

class SegNetwork;

enum class Labeling { kDisjoint, kOverlapped };
enum class ScheduleMode { kClassIncremental, kDomainIncremental };

std::string to_string(Labeling l);
Labeling parse_labeling(const std::string& s);

/// "X-Y": X classes (or domains) in the first step, Y in each later one.
struct ScheduleNotation {
  int first = 0;
  int increment = 0;
  static ScheduleNotation parse(const std::string& text);
};

struct TaskSchedule {
  ScheduleMode mode = ScheduleMode::kClassIncremental;
  Labeling labeling = Labeling::kOverlapped;
  /// Class ids (class mode) or domain ids (domain mode) per step.
  std::vector<std::vector<int>> steps;
  /// Permutation of the object classes 1..n_classes used to fill the steps.
  std::vector<int> class_order;
  int n_classes = 0;

  int num_steps() const { return static_cast<int>(steps.size()); }

  /// Classes a network knows after step t, in head-channel order (without 0).
  std::vector<int> seen_classes(int t) const;
  std::vector<int> future_classes(int t) const;
  /// raw class id -> head channel after step t; -1 for classes not yet seen.
  std::vector<int> channel_of_class(int t) const;
  /// head channel -> raw class id after step t.
  std::vector<int> class_of_channel(int t) const;
  /// Channel-index partition of step t (old = earlier steps, new = step t).
  ClassPartition partition(int t) const;
  int new_class_count(int t) const;
};

/// Expands "X-Y" over `order` (default ascending 1..n_classes). The order may
/// also carry a leading background 0, which is dropped.
TaskSchedule build_schedule(const std::string& notation, int n_classes,
                            Labeling labeling, std::vector<int> order = {});

/// Steps partition the domain ids; every step sees the full class set.
TaskSchedule build_domain_schedule(const std::string& notation, int n_domains,
                                   int n_classes);

/// The five 21-class orders (A-E), each as its list of steps; the first step
/// includes background 0.
std::vector<std::vector<std::vector<int>>> class_orders();

/// Flat permutation of 1..n_classes for order letter A-E. For 20 classes the
/// fixed orders are returned; otherwise A is ascending and B-E are seeded
/// shuffles.
std::vector<int> class_order_permutation(char letter, int n_classes);

// ---------------------------------------------------------------------------
// Synthetic scenes.

struct SynthSceneSpec {
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  int n_classes = 10;
  int min_shapes = 1;
  int max_shapes = 3;
  int domain_id = 0;

  std::uint64_t hash() const;
};

/// Planar RGB image (3 x h x w) and label mask (h x w), raw class ids.
struct Scene {
  int height = 0;
  int width = 0;
  int domain_id = 0;
  std::vector<std::uint8_t> image;
  std::vector<std::uint8_t> mask;

  bool contains(int label) const;
  std::vector<int> labels() const;
};

Scene generate_scene(const SynthSceneSpec& spec, std::uint64_t index);
std::vector<Scene> generate_scenes(const SynthSceneSpec& spec, std::uint64_t first,
                                   std::size_t count);

inline constexpr int kDatasetCacheVersion = 1;

void write_dataset_cache(const std::filesystem::path& dir, const SynthSceneSpec& spec,
                         std::span<const Scene> scenes);
/// Throws when the manifest version or spec hash differs from `spec`.
std::vector<Scene> read_dataset_cache(const std::filesystem::path& dir,
                                      const SynthSceneSpec& spec);

// ---------------------------------------------------------------------------
// Step datasets.

struct StepDataset {
  /// Images with masks relabeled for the step (raw class ids, 0 elsewhere).
  std::vector<Scene> scenes;
  /// Index of every kept scene in the raw pool.
  std::vector<std::size_t> provenance;
};

/// Disjoint: keep scenes with a current-step class and no future-step class.
/// Overlapped: keep scenes with a current-step class. In both, every label
/// outside the current step (other than ignore) becomes background.
/// Domain mode keeps the step's domains and never relabels.
StepDataset filter_and_relabel(std::span<const Scene> raw, const TaskSchedule& sched,
                               int t);

/// Normalized float batch (n, 3, h, w); flips[i] mirrors scene i horizontally.
Tensor scenes_to_tensor(std::span<const Scene* const> scenes,
                        const std::vector<bool>& flips = {});
/// Raw labels mapped through `channel_of_class`; ignore stays ignore.
LabelMap scenes_to_labels(std::span<const Scene* const> scenes,
                          const std::vector<int>& channel_of_class,
                          const std::vector<bool>& flips = {});

// ---------------------------------------------------------------------------
// Metrics.

struct IoUReport {
  std::map<int, Real> per_class_iou;  // raw class id -> IoU
  std::vector<int> old_group;         // raw ids
  std::vector<int> new_group;
  Real miou_old = 0.0;
  Real miou_new = 0.0;
  Real miou_all = 0.0;

  /// Columns class_id, iou, group.
  std::string to_csv() const;
};

/// Confusion counts over raw class ids 0..n_classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int n_classes);
  void add(int truth, int pred);
  IoUReport report(const std::vector<int>& old_group,
                   const std::vector<int>& new_group) const;

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

/// Evaluates after step t against original masks. Ground truth of classes
/// not seen yet is ignored. Groups follow the base/incremental split:
/// old = background + first-step classes, new = classes of later steps.
IoUReport evaluate(const SegNetwork& net, std::span<const Scene> val,
                   const TaskSchedule& sched, int t, int batch_size = 16);

}  // namespace rcil
