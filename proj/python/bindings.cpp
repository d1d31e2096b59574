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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rcil/config.hpp"
#include "rcil/distill.hpp"
#include "rcil/runner.hpp"
#include "rcil/verify.hpp"

namespace py = pybind11;
using namespace rcil;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 4) throw py::value_error("expected a 4-d array (N, C, H, W)");
  const Shape4 s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                 static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3))};
  return Tensor::from_data(s, std::vector<Real>(a.data(), a.data() + a.size()));
}

std::vector<Tensor> to_tensors(const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& v) {
  std::vector<Tensor> out;
  out.reserve(v.size());
  for (const auto& a : v) out.push_back(to_tensor(a));
  return out;
}

py::dict step_dict(const StepResult& s) {
  py::dict d;
  d["step"] = s.step;
  d["miou_old"] = s.report.miou_old;
  d["miou_new"] = s.report.miou_new;
  d["miou_all"] = s.report.miou_all;
  d["per_class_iou"] = s.report.per_class_iou;
  d["train_images"] = s.train_images;
  d["inference_macs"] = s.inference_macs;
  d["inference_params"] = s.inference_params;
  return d;
}

ExperimentConfig with_overrides(ExperimentConfig cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) cfg.apply_override(o);
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_rcil, m) {
  m.doc() = "Continual segmentation with re-parameterized blocks and pooled distillation";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init<>())
      .def_static("parse", &ExperimentConfig::parse, py::arg("text"))
      .def_static("load", &ExperimentConfig::load, py::arg("path"))
      .def("set", &ExperimentConfig::set, py::arg("key"), py::arg("value"))
      .def("apply_override", &ExperimentConfig::apply_override, py::arg("assignment"))
      .def("keys", &ExperimentConfig::keys)
      .def("to_text", &ExperimentConfig::to_text)
      .def("hash", &ExperimentConfig::hash)
      .def("run_id", &ExperimentConfig::run_id)
      .def("steps", [](const ExperimentConfig& c) { return c.make_schedule().steps; })
      .def_readwrite("seed", &ExperimentConfig::seed)
      .def_readwrite("outdir", &ExperimentConfig::outdir)
      .def_readwrite("epochs", &ExperimentConfig::epochs)
      .def("__repr__", [](const ExperimentConfig& c) { return "<rcil.Config " + c.run_id() + ">"; });

  m.def(
      "run",
      [](const ExperimentConfig& cfg, const std::vector<std::string>& overrides, bool resume,
         bool plots) {
        RunOptions opts;
        opts.quiet = true;
        opts.resume = resume;
        opts.write_plots = plots;
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(with_overrides(cfg, overrides), opts);
        }
        py::dict d;
        d["run_id"] = r.run_id;
        d["run_dir"] = r.run_dir.string();
        py::list steps;
        for (const auto& s : r.steps) steps.append(step_dict(s));
        d["steps"] = steps;
        d["executed_terms"] = r.history.executed_terms;
        return d;
      },
      py::arg("config"), py::arg("overrides") = std::vector<std::string>{}, py::arg("resume") = true,
      py::arg("plots") = false, "Trains every step and returns per-step metrics.");

  m.def("ablation_axes", &ablation_axes);
  m.def(
      "ablate",
      [](const ExperimentConfig& cfg, const std::string& axis) {
        RunOptions opts;
        opts.quiet = true;
        opts.write_plots = false;
        AblationTable t;
        {
          py::gil_scoped_release release;
          t = run_ablation(cfg, axis, opts);
        }
        return t.to_markdown();
      },
      py::arg("config"), py::arg("axis"), "Runs one ablation axis; returns the markdown table.");
  m.def(
      "report", [](const std::string& outdir) { return report(outdir); }, py::arg("outdir"));

  m.def(
      "verify",
      [](std::uint64_t seed) {
        std::vector<std::tuple<std::string, bool, std::string>> out;
        for (const auto& r : run_verify_suite({}, seed)) out.emplace_back(r.name, r.passed, r.detail);
        return out;
      },
      py::arg("seed") = 20240, "Runs the invariant suite; returns (name, passed, detail) tuples.");

  m.def(
      "pcd_loss",
      [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& teacher,
         const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& student,
         const std::string& variant, std::vector<int> spatial_kernels, std::vector<int> channel_kernels) {
        DistillConfig cfg;
        cfg.variant = parse_distill_variant(variant);
        if (!spatial_kernels.empty()) cfg.pool.spatial_kernels = std::move(spatial_kernels);
        if (!channel_kernels.empty()) cfg.pool.channel_kernels = std::move(channel_kernels);
        return pcd_loss(to_tensors(teacher), to_tensors(student), cfg).item();
      },
      py::arg("teacher"), py::arg("student"), py::arg("variant") = "avg",
      py::arg("spatial_kernels") = std::vector<int>{}, py::arg("channel_kernels") = std::vector<int>{},
      "Distillation loss between lists of (N, C, H, W) feature maps.");
}
