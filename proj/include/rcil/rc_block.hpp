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

#include <array>
#include <vector>

#include "rcil/ops.hpp"
#include "rcil/rng.hpp"

namespace rcil {

/// One conv + norm path of a representation-compensation block.
struct RCBranch {
  Conv2dParams conv;
  BatchNormParams norm;
  bool trainable = true;
  // A merged branch carries an exact identity norm and is always evaluated
  // with fixed statistics, even while trainable.
  bool merged = false;

  /// conv -> norm. Batch statistics are used only when `batch_stats` is set
  /// and the branch is trainable and not merged.
  Tensor forward(const Tensor& x, bool batch_stats);
  Tensor forward_eval(const Tensor& x) const;

  void set_trainable(bool flag);
  std::vector<Tensor> parameters() const;
  RCBranch clone() const;
};

/// Channel-wise fusion weights for the first branch; the second receives 1 - eta.
struct DropPathMask {
  std::vector<Real> eta;

  static DropPathMask sample(int channels, Rng& rng);
  static DropPathMask constant(int channels, Real value);
};

enum class BlockMode { kTraining, kInference };

/// kShared starts both branches from the same draw; kIndependent draws each.
enum class BranchInit { kShared, kIndependent };

struct MergedConv {
  Conv2dParams conv;
};

/// How a block is carried into the next continual step.
struct TransitionOptions {
  bool merge = true;
  bool freeze = true;
  std::array<Real, 2> merge_weights{0.5, 0.5};
};

/// Two parallel conv+norm branches summed before the activation.
///
/// In training the pre-activation output is eta * a(x) + (1 - eta) * b(x)
/// with eta drawn per channel from {0, 0.5, 1}; at inference eta = 0.5.
/// A block built with two_branch = false is a plain conv+norm that only
/// uses branch_b.
class RCBlock {
 public:
  RCBranch branch_a;
  RCBranch branch_b;
  std::array<Real, 2> fusion_weights{0.5, 0.5};
  BlockMode mode = BlockMode::kTraining;
  bool two_branch = true;

  static RCBlock create(int in_ch, int out_ch, int kernel, int stride,
                        int padding, Rng& rng, bool two_branch = true,
                        BranchInit init = BranchInit::kShared);

  int out_channels() const { return branch_b.conv.out_channels(); }
  int in_channels() const { return branch_b.conv.in_channels(); }

  Tensor forward_train(const Tensor& x, const DropPathMask& mask,
                       bool batch_stats = true);
  Tensor forward_eval(const Tensor& x) const;

  std::vector<Tensor> parameters() const;
  std::vector<Tensor> trainable_parameters() const;
  RCBlock clone() const;
};

/// Folds an eval-mode norm into the preceding convolution:
/// W' = (gamma / sigma) W, b' = (gamma b - gamma mu) / sigma + beta,
/// sigma = sqrt(running_var + eps).
Conv2dParams fuse_conv_bn(const Conv2dParams& conv, const BatchNormParams& norm);

/// w_a * fuse(a) + w_b * fuse(b). For a single-branch block returns fuse(b).
MergedConv merge_branches(const RCBlock& block, std::array<Real, 2> weights);

/// Applies the merged conv as the sole path, the inference form of a block.
Tensor merged_forward(const MergedConv& merged, const Tensor& x);

/// Produces the block for the next step: the merged previous function as
/// branch_a (identity norm, frozen) and a copy of the old branch_b.
RCBlock step_transition(const RCBlock& block, const TransitionOptions& opts = {});

}  // namespace rcil
