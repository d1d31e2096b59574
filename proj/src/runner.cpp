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

#include "rcil/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "rcil/report.hpp"

namespace rcil {

namespace {

constexpr int kTableFormatVersion = 1;

std::string fmt6(Real v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string join_ints(const std::vector<int>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(v[i]);
  }
  return out;
}

std::string list_axes() {
  std::string out;
  for (const auto& a : ablation_axes()) out += (out.empty() ? "" : ", ") + a;
  return out;
}

Real parse_real(const std::string& s) {
  if (s == "nan") return std::nan("");
  return std::stod(s);
}

}  // namespace

std::vector<std::string> ablation_axes() {
  return {"pooling_variant", "rc_ops", "class_order", "kd_layers", "kernels", "hparams"};
}

std::vector<AblationRow> ablation_rows(const std::string& axis, const ExperimentConfig& base) {
  std::vector<AblationRow> rows;
  if (axis == "pooling_variant") {
    for (const char* v : {"none", "gap", "max", "strip", "avg"})
      rows.push_back({v, {"method.name=rc_pcd", std::string("distill.variant=") + v}});
  } else if (axis == "rc_ops") {
    const std::string m = "method.name=rc_only";
    rows.push_back({"parallel", {m, "rc.merge=false", "rc.freeze=false", "rc.drop_path=false"}});
    rows.push_back({"+merge", {m, "rc.merge=true", "rc.freeze=false", "rc.drop_path=false"}});
    rows.push_back({"+frozen", {m, "rc.merge=true", "rc.freeze=true", "rc.drop_path=false"}});
    rows.push_back({"+drop-path", {m, "rc.merge=true", "rc.freeze=true", "rc.drop_path=true"}});
  } else if (axis == "class_order") {
    for (const char* o : {"A", "B", "C", "D", "E"})
      rows.push_back({o, {std::string("schedule.class_order=") + o}});
  } else if (axis == "kd_layers") {
    for (const char* mask : {"0000", "1000", "0100", "0010", "0001", "1100", "1110", "0011",
                             "0111", "1111"}) {
      std::string list;
      for (const char* c = mask; *c; ++c) list += (list.empty() ? "" : ",") + std::string(1, *c);
      rows.push_back({mask, {"method.name=pcd_only", "distill.variant=avg",
                             "distill.layer_mask=" + list}});
    }
  } else if (axis == "kernels") {
    const auto all = base.distill.pool.spatial_kernels;
    for (int k : all)
      rows.push_back({"k" + std::to_string(k), {"distill.spatial_kernels=" + std::to_string(k)}});
    for (std::size_t n = 2; n < all.size(); ++n) {
      std::vector<int> prefix(all.begin(), all.begin() + static_cast<long>(n));
      rows.push_back({"k" + join_ints(prefix, '+'),
                      {"distill.spatial_kernels=" + join_ints(prefix, ',')}});
    }
    rows.push_back({"all", {"distill.spatial_kernels=" + join_ints(all, ',')}});
  } else if (axis == "hparams") {
    for (const char* l : {"20", "100", "200"})
      for (const char* g : {"0.001", "0.01", "0.05"})
        rows.push_back({std::string("lambda=") + l + " gamma=" + g,
                        {std::string("loss.lambda=") + l, std::string("loss.gamma=") + g}});
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "'; valid axes: " + list_axes());
  }
  return rows;
}

std::string AblationTable::to_csv() const {
  std::string out = "format_version,axis,label,run_id,miou_old,miou_new,miou_all\n";
  const std::string prefix = std::to_string(kTableFormatVersion) + "," + axis + ",";
  for (const auto& r : rows)
    out += prefix + r.row.label + "," + r.run_id + "," + fmt6(r.miou_old) + "," +
           fmt6(r.miou_new) + "," + fmt6(r.miou_all) + "\n";
  if (summary) {
    const auto& s = *summary;
    out += prefix + "mean,," + fmt6(s[0]) + "," + fmt6(s[1]) + "," + fmt6(s[2]) + "\n";
    out += prefix + "std,," + fmt6(s[3]) + "," + fmt6(s[4]) + "," + fmt6(s[5]) + "\n";
  }
  return out;
}

std::string AblationTable::to_markdown() const {
  std::string out = "| " + axis + " | old | new | all |\n|---|---|---|---|\n";
  auto pct = [](Real v) {
    if (!std::isfinite(v)) return std::string("nan");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
    return std::string(buf);
  };
  for (const auto& r : rows)
    out += "| " + r.row.label + " | " + pct(r.miou_old) + " | " + pct(r.miou_new) + " | " +
           pct(r.miou_all) + " |\n";
  if (summary) {
    const auto& s = *summary;
    out += "| mean ± std | " + pct(s[0]) + " ± " + pct(s[3]) + " | " + pct(s[1]) + " ± " +
           pct(s[4]) + " | " + pct(s[2]) + " ± " + pct(s[5]) + " |\n";
  }
  return out;
}

namespace {

std::array<Real, 6> mean_std(const std::vector<AblationOutcome>& rows) {
  std::array<Real, 6> s{};
  const auto n = static_cast<Real>(rows.size());
  for (const auto& r : rows) {
    s[0] += r.miou_old / n;
    s[1] += r.miou_new / n;
    s[2] += r.miou_all / n;
  }
  if (rows.size() > 1) {
    for (const auto& r : rows) {
      s[3] += (r.miou_old - s[0]) * (r.miou_old - s[0]);
      s[4] += (r.miou_new - s[1]) * (r.miou_new - s[1]);
      s[5] += (r.miou_all - s[2]) * (r.miou_all - s[2]);
    }
    for (int i = 3; i < 6; ++i) s[i] = std::sqrt(s[i] / (n - 1));
  }
  return s;
}

AblationTable table_from_csv(const CsvTable& csv) {
  AblationTable t;
  const int c_axis = csv.column("axis"), c_label = csv.column("label"),
            c_run = csv.column("run_id"), c_old = csv.column("miou_old"),
            c_new = csv.column("miou_new"), c_all = csv.column("miou_all");
  std::array<Real, 6> s{};
  bool has_summary = false;
  for (const auto& row : csv.rows) {
    t.axis = row[c_axis];
    const Real o = parse_real(row[c_old]), n = parse_real(row[c_new]), a = parse_real(row[c_all]);
    if (row[c_label] == "mean" && row[c_run].empty()) {
      s[0] = o, s[1] = n, s[2] = a, has_summary = true;
    } else if (row[c_label] == "std" && row[c_run].empty()) {
      s[3] = o, s[4] = n, s[5] = a;
    } else {
      AblationOutcome out;
      out.row.label = row[c_label];
      out.run_id = row[c_run];
      out.miou_old = o, out.miou_new = n, out.miou_all = a;
      t.rows.push_back(out);
    }
  }
  if (has_summary) t.summary = s;
  return t;
}

}  // namespace

AblationTable run_ablation(const ExperimentConfig& base, const std::string& axis,
                           const RunOptions& opts) {
  const auto rows = ablation_rows(axis, base);
  AblationTable table;
  table.axis = axis;
  for (const auto& row : rows) {
    ExperimentConfig cfg = base;
    for (const auto& o : row.overrides) cfg.apply_override(o);
    if (!opts.quiet) std::fprintf(stderr, "ablate %s: %s\n", axis.c_str(), row.label.c_str());
    const ExperimentResult res = run_experiment(cfg, opts);
    const auto& last = res.steps.back().report;
    table.rows.push_back({row, res.run_id, last.miou_old, last.miou_new, last.miou_all});
  }
  if (axis == "class_order") table.summary = mean_std(table.rows);
  const auto dir = std::filesystem::path(base.outdir) / ("ablate_" + axis);
  write_text(dir / "table.csv", table.to_csv());
  write_text(dir / "table.md", table.to_markdown());
  return table;
}

std::string report(const std::filesystem::path& outdir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(outdir)) throw Error("report: '" + outdir.string() + "' is not a directory");
  std::vector<fs::path> runs;
  std::vector<fs::path> ablations;
  if (fs::exists(outdir / "results.csv")) runs.push_back(outdir);
  for (const auto& e : fs::directory_iterator(outdir)) {
    if (!e.is_directory()) continue;
    if (fs::exists(e.path() / "results.csv")) runs.push_back(e.path());
    if (fs::exists(e.path() / "table.csv")) ablations.push_back(e.path());
  }
  std::sort(runs.begin(), runs.end());
  std::sort(ablations.begin(), ablations.end());

  std::string md = "| run | method | steps | old | new | all |\n|---|---|---|---|---|---|\n";
  std::string csv = "format_version,run_id,method,steps,miou_old,miou_new,miou_all\n";
  for (const auto& dir : runs) {
    render_run_plots(dir);
    const CsvTable t = read_csv(dir / "results.csv");
    const int c_run = t.column("run_id"), c_method = t.column("method"),
              c_step = t.column("step"), c_group = t.column("group"), c_miou = t.column("miou");
    if (t.rows.empty()) continue;
    int last = -1;
    for (const auto& r : t.rows) last = std::max(last, std::stoi(r[c_step]));
    std::map<std::string, std::string> final_row;
    for (const auto& r : t.rows)
      if (std::stoi(r[c_step]) == last) final_row[r[c_group]] = r[c_miou];
    const auto& first = t.rows.front();
    md += "| " + first[c_run] + " | " + first[c_method] + " | " + std::to_string(last + 1) +
          " | " + final_row["old"] + " | " + final_row["new"] + " | " + final_row["all"] + " |\n";
    csv += std::to_string(kTableFormatVersion) + "," + first[c_run] + "," + first[c_method] +
           "," + std::to_string(last + 1) + "," + final_row["old"] + "," + final_row["new"] +
           "," + final_row["all"] + "\n";
  }
  for (const auto& dir : ablations) {
    const AblationTable t = table_from_csv(read_csv(dir / "table.csv"));
    write_text(dir / "table.md", t.to_markdown());
    md += "\n" + t.to_markdown();
  }
  write_text(outdir / "summary.csv", csv);
  write_text(outdir / "summary.md", md);
  return md;
}

}  // namespace rcil
