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

#include "rcil/optim.hpp"

#include <algorithm>
#include <cmath>

namespace rcil {

Real OptimizerState::effective_lr() const {
  if (total_iterations <= 0) return 0.0;
  const Real frac = 1.0 - static_cast<Real>(iteration) / static_cast<Real>(total_iterations);
  if (frac <= 0.0) return 0.0;
  return base_lr * std::pow(frac, poly_power);
}

void Sgd::step(std::span<Tensor> params) {
  if (velocity_.size() != params.size()) {
    if (!velocity_.empty())
      throw ShapeError("Sgd::step: parameter list changed size");
    velocity_.resize(params.size());
  }
  const Real lr = state_.effective_lr();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    if (!p.has_grad()) continue;
    auto& v = velocity_[k];
    if (v.empty()) v.assign(p.numel(), 0.0);
    if (v.size() != p.numel()) throw ShapeError("Sgd::step: shape mismatch");
    auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = state_.momentum * v[i] + g[i];
      w[i] -= lr * v[i];
    }
  }
  state_.iteration += 1;
}

void zero_grad(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace rcil
