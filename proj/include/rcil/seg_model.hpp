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
#include <vector>

#include "rcil/rc_block.hpp"

namespace rcil {

struct StageSpec {
  int n_blocks = 2;
  int channels = 16;
  bool downsample = true;
};

struct ArchSpec {
  int in_channels = 3;
  std::vector<StageSpec> stages{{2, 16, true}, {2, 32, true}, {2, 64, true}};
  int decoder_channels = 32;
  bool rc = true;
  // New head rows start from the background row with its bias lowered by this.
  Real head_init_shift = 1.0;
};

struct ForwardResult {
  Tensor logits;
  /// Pre-activation output of the last block of every stage, then the decoder.
  std::vector<Tensor> taps;
};

/// Encoder stages of RC blocks, one decoder RC block, a 1x1 classifier head
/// and bilinear upsampling back to the input size.
class SegNetwork {
 public:
  static SegNetwork create(const ArchSpec& arch, int head_channels, Rng& rng);

  /// Training forward: batch-statistics norms; each two-branch block draws a
  /// fresh drop-path mask from `rng` when `drop_path` is set, else uses 0.5.
  ForwardResult forward_train(const Tensor& x, Rng& rng, bool drop_path);
  ForwardResult forward_eval(const Tensor& x) const;

  /// Appends `new_classes` head rows; existing rows are copied unchanged.
  void extend_head(int new_classes);

  /// Inference form: every block collapsed into a single merged conv.
  SegNetwork merged() const;

  int head_channels() const { return head.out_channels(); }
  int num_taps() const { return static_cast<int>(stages.size()) + 1; }
  const ArchSpec& arch() const { return arch_; }

  std::vector<RCBlock*> blocks();
  std::vector<const RCBlock*> blocks() const;
  std::vector<Tensor> parameters() const;
  std::vector<Tensor> trainable_parameters() const;
  /// Counts parameter scalars; optionally excludes the classifier head.
  std::size_t parameter_count(bool include_head = true) const;
  /// FNV-1a over every parameter value and norm statistic.
  std::uint64_t parameter_hash() const;
  /// Like parameter_hash but restricted to frozen (non-trainable) branches.
  std::uint64_t frozen_hash() const;

  void freeze_all();
  SegNetwork clone() const;

  std::vector<std::vector<RCBlock>> stages;
  RCBlock decoder;
  Conv2dParams head;

 private:
  ForwardResult run(const Tensor& x, Rng* rng, bool training, bool drop_path);
  ArchSpec arch_;
};

SegNetwork extend_head(const SegNetwork& net, int new_classes);

/// Teacher / student pair for one continual step.
struct StepModel {
  SegNetwork teacher;
  SegNetwork student;
};

/// Teacher is a frozen copy of `prev`; the student passes every block
/// through step_transition and grows the head by `new_classes` (0 keeps it).
StepModel make_step_model(const SegNetwork& prev, int new_classes,
                          const TransitionOptions& opts = {});

}  // namespace rcil
