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

#include <optional>
#include <string>
#include <vector>

#include "rcil/ops.hpp"

namespace rcil {

enum class DistillVariant { kAvgCube, kStrip, kMax, kGap, kNone };

std::string to_string(DistillVariant v);
DistillVariant parse_distill_variant(const std::string& name);

struct PoolSpec {
  std::vector<int> spatial_kernels{4, 8, 12, 16, 20, 24};
  int spatial_stride = 1;
  std::vector<int> channel_kernels{3};
  int channel_stride = 1;
};

struct DistillConfig {
  DistillVariant variant = DistillVariant::kAvgCube;
  PoolSpec pool;
  /// One flag per tap; empty means every tap participates.
  std::vector<bool> layer_mask;
  /// Apply successive kernels to the previously pooled map instead of the
  /// squared input.
  bool cascade = false;
};

enum class PoolAxis { kSpatial, kChannel };

/// Squares `x` elementwise and average-pools along `axis`.
/// Returns nullopt when the kernel does not fit the pooled extent.
std::optional<Tensor> pooled_square(const Tensor& x, int kernel, int stride,
                                    PoolAxis axis);

/// Batch mean of the per-sample L2 distance between two equally shaped maps.
Tensor per_sample_l2(const Tensor& teacher, const Tensor& student);

// All losses below detach the teacher taps; gradients reach the student only.
// Each returns the mean over enabled layers of a per-layer term; layers whose
// kernels all fail to fit contribute 0.

Tensor skd_loss(const std::vector<Tensor>& taps_t, const std::vector<Tensor>& taps_s,
                const DistillConfig& cfg);
Tensor ckd_loss(const std::vector<Tensor>& taps_t, const std::vector<Tensor>& taps_s,
                const DistillConfig& cfg);
Tensor strip_pool_loss(const std::vector<Tensor>& taps_t,
                       const std::vector<Tensor>& taps_s,
                       const DistillConfig& cfg = {});
Tensor max_pool_loss(const std::vector<Tensor>& taps_t,
                     const std::vector<Tensor>& taps_s, const DistillConfig& cfg);
Tensor gap_loss(const std::vector<Tensor>& taps_t, const std::vector<Tensor>& taps_s,
                const DistillConfig& cfg);
Tensor unpooled_loss(const std::vector<Tensor>& taps_t,
                     const std::vector<Tensor>& taps_s, const DistillConfig& cfg);

/// Distillation objective for the configured variant. For kAvgCube this is
/// skd_loss + ckd_loss.
Tensor pcd_loss(const std::vector<Tensor>& taps_t, const std::vector<Tensor>& taps_s,
                const DistillConfig& cfg);

}  // namespace rcil
