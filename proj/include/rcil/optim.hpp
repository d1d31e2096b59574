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
#include <span>
#include <vector>

#include "rcil/tensor.hpp"

namespace rcil {

struct OptimizerState {
  Real base_lr = 0.01;
  Real momentum = 0.9;
  std::int64_t iteration = 0;
  std::int64_t total_iterations = 1;
  Real poly_power = 0.9;

  /// base_lr * (1 - iteration / total_iterations)^poly_power, clamped at 0.
  Real effective_lr() const;
};

/// Momentum SGD with a poly learning-rate schedule.
///
/// velocity <- momentum * velocity + grad;  param <- param - lr * velocity.
/// Parameters without a gradient are skipped but still keep their slot.
class Sgd {
 public:
  explicit Sgd(OptimizerState state) : state_(state) {}

  void step(std::span<Tensor> params);

  const OptimizerState& state() const { return state_; }
  OptimizerState& state() { return state_; }
  const std::vector<std::vector<Real>>& velocity() const { return velocity_; }
  std::vector<std::vector<Real>>& velocity() { return velocity_; }

 private:
  OptimizerState state_;
  std::vector<std::vector<Real>> velocity_;
};

void zero_grad(std::span<Tensor> params);

}  // namespace rcil
