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

#include <functional>
#include <string>
#include <vector>

#include "rcil/config.hpp"

namespace rcil {

// ---------------------------------------------------------------------------
// Reference implementations, written for clarity and kept separate from the
// production kernels they check.

namespace oracle {

/// Seven nested loops, zero padding, optional bias (empty = none).
std::vector<Real> conv2d(const std::vector<Real>& x, Shape4 xs, const std::vector<Real>& w,
                         Shape4 ws, const std::vector<Real>& bias, int stride, int pad);

std::vector<Real> batch_norm_eval(const std::vector<Real>& x, Shape4 xs,
                                  const BatchNormParams& p);

/// Explicit k x k windows with stride 1 over the squared input.
std::vector<Real> square_avg_pool_spatial(const std::vector<Real>& x, Shape4 xs, int k);
/// Explicit channel windows of length k with stride 1 over the squared input.
std::vector<Real> square_avg_pool_channel(const std::vector<Real>& x, Shape4 xs, int k);

/// Spatial / channel pooled distillation on raw vectors (stride 1, no cascade).
Real skd(const std::vector<Tensor>& taps_t, const std::vector<Tensor>& taps_s,
         const DistillConfig& cfg);
Real ckd(const std::vector<Tensor>& taps_t, const std::vector<Tensor>& taps_s,
         const DistillConfig& cfg);

/// Scene inclusion and relabeling by direct set reasoning.
struct FilterResult {
  std::vector<std::size_t> kept;
  std::vector<std::vector<std::uint8_t>> masks;
};
FilterResult filter(const std::vector<Scene>& raw, const TaskSchedule& sched, int t);

/// Twelve tiny scenes covering every combination the filter distinguishes for
/// a 4-class, three-step schedule.
std::vector<Scene> hand_built_corpus();

}  // namespace oracle

// ---------------------------------------------------------------------------
// Finite differences.

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Relative error ||g_auto - g_fd|| / (||g_auto|| + ||g_fd||) over every
/// element of every input (0 when both vanish). Inputs must be leaves.
Real gradient_relative_error(const ScalarFn& f, std::vector<Tensor> inputs, Real h = 1e-6);

// ---------------------------------------------------------------------------
// Check suite.

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Faults {
  /// Adds 1e-3 to one weight of every merged conv before comparing.
  bool corrupt_merged_weight = false;
  /// Merges with weights (1, 1) instead of (0.5, 0.5) in the transition check.
  bool disable_half_merge = false;
};

CheckResult check_merge_equivalence(int cases, std::uint64_t seed, const Faults& f = {});
CheckResult check_conv_bn_fusion(int cases, std::uint64_t seed);
CheckResult check_step_transition(int cases, std::uint64_t seed, const Faults& f = {});
CheckResult check_drop_path_expectation(int cases, std::uint64_t seed);
/// One result per operation or loss.
std::vector<CheckResult> check_gradients(int instances, std::uint64_t seed);
CheckResult check_distill_oracles(int cases, std::uint64_t seed);
CheckResult check_distill_monotone(std::uint64_t seed);
CheckResult check_protocol_set_logic();
CheckResult check_checkpoint_roundtrip(std::uint64_t seed);

/// Everything above with the default sizes.
std::vector<CheckResult> run_verify_suite(const Faults& f = {}, std::uint64_t seed = 20240);

}  // namespace rcil
