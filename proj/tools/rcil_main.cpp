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

// rcil command-line front end: run, ablate, verify, report.

#include <cstdio>
#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "rcil/runner.hpp"
#include "rcil/verify.hpp"

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string outdir;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "run seed");
  cmd->add_option("--outdir", c.outdir, "output root (default: $RCIL_OUTDIR or ./runs)");
  cmd->add_option("--override", c.overrides, "key=value, may repeat")->allow_extra_args(false);
}

std::string default_outdir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("RCIL_OUTDIR"); env && *env) return env;
  return "";
}

rcil::ExperimentConfig resolve(const Common& c) {
  rcil::ExperimentConfig cfg =
      c.config_path.empty() ? rcil::ExperimentConfig{} : rcil::ExperimentConfig::load(c.config_path);
  for (const auto& o : c.overrides) cfg.apply_override(o);
  if (c.seed) cfg.seed = *c.seed;
  if (auto dir = default_outdir(c.outdir); !dir.empty()) cfg.outdir = dir;
  // Validates the schedule and class order before any work starts.
  (void)cfg.make_schedule();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual semantic segmentation with reparameterized blocks and pooled distillation"};
  app.require_subcommand(1);

  Common run_c;
  bool no_resume = false, force = false, no_plots = false, quiet = false;
  auto* run = app.add_subcommand("run", "train every step of the configured schedule");
  add_common(run, run_c);
  run->add_flag("--no-resume", no_resume, "ignore existing checkpoints");
  run->add_flag("--force", force, "load checkpoints despite a config hash mismatch");
  run->add_flag("--no-plots", no_plots, "skip SVG rendering");
  run->add_flag("-q,--quiet", quiet, "no progress output");

  Common abl_c;
  std::string axis;
  bool abl_quiet = false;
  auto* ablate = app.add_subcommand("ablate", "run one ablation axis against the base config");
  add_common(ablate, abl_c);
  ablate->add_option("--axis", axis, "pooling_variant | rc_ops | class_order | kd_layers | kernels | hparams")
      ->required();
  ablate->add_flag("-q,--quiet", abl_quiet, "no progress output");

  std::uint64_t verify_seed = 20240;
  rcil::Faults faults;
  auto* verify = app.add_subcommand("verify", "run the invariant suite");
  verify->add_option("--seed", verify_seed, "seed for random cases");
  verify->add_flag("--corrupt-merged-weight", faults.corrupt_merged_weight,
                   "fault injection: perturb one merged weight by 1e-3");
  verify->add_flag("--disable-half-merge", faults.disable_half_merge,
                   "fault injection: merge with weights (1, 1)");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "re-render plots and tables from existing CSVs");
  report->add_option("--outdir", report_dir, "run directory or output root");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = resolve(run_c);
      rcil::RunOptions opts;
      opts.resume = !no_resume;
      opts.force = force;
      opts.write_plots = !no_plots;
      opts.quiet = quiet;
      const auto res = rcil::run_experiment(cfg, opts);
      std::cout << res.run_dir.string() << "\n";
      return 0;
    }
    if (*ablate) {
      const auto cfg = resolve(abl_c);
      (void)rcil::ablation_rows(axis, cfg);
      rcil::RunOptions opts;
      opts.quiet = abl_quiet;
      const auto table = rcil::run_ablation(cfg, axis, opts);
      std::cout << table.to_markdown();
      return 0;
    }
    if (*verify) {
      const auto results = rcil::run_verify_suite(faults, verify_seed);
      int failed = 0;
      for (const auto& r : results) {
        std::printf("%-4s %-34s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
        failed += r.passed ? 0 : 1;
      }
      std::printf("%d/%zu checks passed\n", static_cast<int>(results.size()) - failed, results.size());
      return failed == 0 ? 0 : 1;
    }
    if (*report) {
      std::string dir = default_outdir(report_dir);
      if (dir.empty()) dir = rcil::ExperimentConfig{}.outdir;
      std::cout << rcil::report(dir);
      return 0;
    }
  } catch (const rcil::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
