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

#include "rcil/tensor.hpp"

namespace rcil {

inline constexpr int kIgnoreLabel = 255;

/// Per-pixel integer labels, shape (n, h, w). Label values index head channels.
struct LabelMap {
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<std::int32_t> labels;

  std::int32_t at(int b, int y, int x) const {
    return labels[(static_cast<std::size_t>(b) * h + y) * w + x];
  }
  std::size_t size() const { return labels.size(); }
};

/// Background (channel 0), classes learned before this step, and classes of
/// this step. Together they must cover every head channel exactly once.
struct ClassPartition {
  std::vector<int> old_classes;
  std::vector<int> new_classes;

  int num_channels() const {
    return 1 + static_cast<int>(old_classes.size() + new_classes.size());
  }
  /// Throws if the sets overlap, contain 0, or leave a channel uncovered.
  void validate() const;
};

struct LossWeights {
  Real lambda = 100.0;
  Real gamma = 0.01;
  // Whether background is counted in both terms of the adaptive factor.
  bool count_background = false;
};

/// Cross-entropy where the probabilities of background and all old classes
/// are summed into the background class. Old-class labels are rejected.
Tensor unce_loss(const Tensor& logits, const LabelMap& labels,
                 const ClassPartition& part);

/// Distillation from the previous model's channels ({0} + old) where the
/// student's background absorbs the probabilities of the new classes.
/// Pixels labeled kIgnoreLabel in `labels` (when given) are excluded.
Tensor unkd_loss(const Tensor& logits_s, const Tensor& logits_t,
                 const ClassPartition& part, const LabelMap* labels = nullptr);

/// Plain per-pixel softmax cross-entropy over all channels.
Tensor ce_loss(const Tensor& logits, const LabelMap& labels);

/// Logit distillation on the teacher's channels, student probabilities
/// renormalized over those channels (no background absorption).
Tensor kd_loss(const Tensor& logits_s, const Tensor& logits_t,
               const ClassPartition& part, const LabelMap* labels = nullptr);

/// sqrt(|C| / |C_t|): classes seen so far over classes of this step.
Real adaptive_factor(const ClassPartition& part, const LossWeights& w);

/// Loss terms of one iteration; undefined entries are absent.
struct LossTerms {
  Tensor ce;
  Tensor kd;
  Tensor skd;
  Tensor ckd;
};

/// ce + lambda * kd * factor + gamma * (skd + ckd), factor from adaptive_factor.
Tensor total_loss(const LossTerms& terms, const ClassPartition& part,
                  const LossWeights& w);
/// Same with an explicit factor on the distillation term.
Tensor total_loss(const LossTerms& terms, Real kd_factor, const LossWeights& w);

}  // namespace rcil
