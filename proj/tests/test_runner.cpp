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

#include "doctest.h"
#include "rcil/report.hpp"
#include "rcil/runner.hpp"
#include "test_util.hpp"

using namespace rcil;
using rcil::test::temp_dir;
using rcil::test::tiny_config;

namespace {

std::vector<std::string> labels(const std::string& axis) {
  std::vector<std::string> out;
  for (const auto& r : ablation_rows(axis, ExperimentConfig{})) out.push_back(r.label);
  return out;
}

}  // namespace

TEST_SUITE("runner") {

TEST_CASE("ablation axes mirror their tables") {
  CHECK(labels("pooling_variant") == std::vector<std::string>{"none", "gap", "max", "strip", "avg"});
  CHECK(labels("rc_ops") == std::vector<std::string>{"parallel", "+merge", "+frozen", "+drop-path"});
  CHECK(labels("class_order") == std::vector<std::string>{"A", "B", "C", "D", "E"});
  CHECK(labels("kd_layers").size() == 10);
  CHECK(labels("hparams").size() == 9);
  const auto k = labels("kernels");
  CHECK(k.front() == "k4");
  CHECK(k.back() == "all");
  CHECK(k.size() == 6 + 4 + 1);
}

TEST_CASE("every ablation row yields a valid config") {
  for (const auto& axis : ablation_axes())
    for (const auto& row : ablation_rows(axis, ExperimentConfig{})) {
      ExperimentConfig cfg;
      for (const auto& o : row.overrides) CHECK_NOTHROW(cfg.apply_override(o));
      CHECK_NOTHROW(cfg.make_schedule());
    }
}

TEST_CASE("unknown axis lists the valid ones") {
  try {
    (void)ablation_rows("depth", ExperimentConfig{});
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const auto& a : ablation_axes()) CHECK(msg.find(a) != std::string::npos);
  }
}

TEST_CASE("class order ablation reports mean and deviation") {
  auto cfg = tiny_config(temp_dir("abl_order"));
  cfg.epochs = 1;
  RunOptions opts;
  opts.quiet = true;
  opts.write_plots = false;
  const auto table = run_ablation(cfg, "class_order", opts);
  REQUIRE(table.rows.size() == 5);
  REQUIRE(table.summary.has_value());
  Real mean = 0.0;
  for (const auto& r : table.rows) mean += r.miou_all / 5.0;
  CHECK((*table.summary)[2] == doctest::Approx(mean));
  const auto dir = std::filesystem::path(cfg.outdir) / "ablate_class_order";
  const CsvTable csv = read_csv(dir / "table.csv");
  CHECK(csv.rows.size() == 7);
  CHECK(read_text(dir / "table.md").find("mean ± std") != std::string::npos);

  // report re-renders tables and plots from the CSVs alone
  const std::string before = read_text(dir / "table.md");
  std::filesystem::remove(dir / "table.md");
  const std::string summary = report(cfg.outdir);
  CHECK(read_text(dir / "table.md") == before);
  CHECK(summary.find("class_order") != std::string::npos);
  CHECK(std::filesystem::exists(std::filesystem::path(cfg.outdir) / table.rows[0].run_id / "plots" /
                                "miou_vs_step.svg"));
  CHECK(read_csv(std::filesystem::path(cfg.outdir) / "summary.csv").rows.size() == 5);
}

TEST_CASE("plots are a pure view of the CSVs") {
  auto cfg = tiny_config(temp_dir("plots"));
  cfg.epochs = 1;
  RunOptions opts;
  opts.quiet = true;
  const auto r = run_experiment(cfg, opts);
  const std::string csv = read_text(r.run_dir / "results.csv");
  const std::string svg = read_text(r.run_dir / "plots" / "miou_vs_step.svg");
  std::filesystem::remove_all(r.run_dir / "plots");
  render_run_plots(r.run_dir);
  CHECK(read_text(r.run_dir / "plots" / "miou_vs_step.svg") == svg);
  CHECK(read_text(r.run_dir / "results.csv") == csv);
  CHECK(svg.find("<svg") != std::string::npos);
}

TEST_CASE("csv parsing") {
  const CsvTable t = parse_csv("a,b\n1,2\n3,\n");
  CHECK(t.header == std::vector<std::string>{"a", "b"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1][1].empty());
  CHECK(t.column("b") == 1);
  CHECK_THROWS(t.column("z"));
}

}  // TEST_SUITE
