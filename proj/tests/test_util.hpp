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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "rcil/config.hpp"
#include "rcil/rng.hpp"
#include "rcil/tensor.hpp"

namespace rcil::test {

inline Tensor random_tensor(Shape4 s, Rng& rng, Real scale = 1.0, bool grad = false) {
  std::vector<Real> v(s.numel());
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::from_data(s, std::move(v), grad);
}

inline Real max_abs_diff(std::span<const Real> a, std::span<const Real> b) {
  Real m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline Real max_abs_diff(const Tensor& a, const Tensor& b) { return max_abs_diff(a.data(), b.data()); }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("rcil_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// A run that finishes in a couple of seconds: 16x16 images, two small
/// stages, four classes over three steps.
inline ExperimentConfig tiny_config(const std::filesystem::path& outdir) {
  ExperimentConfig cfg;
  for (const char* o : {"schedule.notation=2-1", "data.n_classes=4", "data.image_size=16",
                        "data.train_scenes=24", "data.val_scenes=8", "model.stage_channels=4,8",
                        "model.blocks_per_stage=1", "model.decoder_channels=8",
                        "distill.spatial_kernels=2,4", "train.batch_size=4", "train.epochs=2",
                        "train.lr_first=0.05", "train.lr_next=0.005"})
    cfg.apply_override(o);
  cfg.outdir = outdir.string();
  return cfg;
}

}  // namespace rcil::test
