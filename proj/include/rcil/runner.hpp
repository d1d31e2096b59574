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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rcil/trainer.hpp"

namespace rcil {

/// One row of an ablation table: a label and the overrides applied to the
/// base config.
struct AblationRow {
  std::string label;
  std::vector<std::string> overrides;
};

std::vector<std::string> ablation_axes();
/// Rows for `axis`; throws ConfigError listing the valid axes otherwise.
std::vector<AblationRow> ablation_rows(const std::string& axis, const ExperimentConfig& base);

struct AblationOutcome {
  AblationRow row;
  std::string run_id;
  Real miou_old = 0.0;
  Real miou_new = 0.0;
  Real miou_all = 0.0;
};

struct AblationTable {
  std::string axis;
  std::vector<AblationOutcome> rows;
  /// Mean and sample standard deviation over rows (class_order axis only).
  std::optional<std::array<Real, 6>> summary;

  std::string to_csv() const;
  std::string to_markdown() const;
};

/// Runs every row against `base` and writes <outdir>/ablate_<axis>/{table.csv,
/// table.md}.
AblationTable run_ablation(const ExperimentConfig& base, const std::string& axis,
                           const RunOptions& opts = {});

/// Re-renders plots for every run directory under `outdir` (or `outdir`
/// itself when it is a run directory) and returns a summary table built from
/// the results.csv files.
std::string report(const std::filesystem::path& outdir);

}  // namespace rcil
