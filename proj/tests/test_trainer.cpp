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
#include "rcil/distill.hpp"
#include "rcil/report.hpp"
#include "rcil/trainer.hpp"
#include "test_util.hpp"

using namespace rcil;
using rcil::test::temp_dir;
using rcil::test::tiny_config;

namespace {

struct Fixture {
  ExperimentConfig cfg;
  TaskSchedule sched;
  std::vector<Scene> pool;

  explicit Fixture(const std::string& name, const std::string& method = "rc_pcd")
      : cfg(tiny_config(temp_dir(name))) {
    cfg.apply_override("method.name=" + method);
    sched = cfg.make_schedule();
    pool = generate_scenes(cfg.scene_spec(false), 0, static_cast<std::size_t>(cfg.train_scenes));
  }

  SegNetwork trained_step0() {
    Rng init(1), rng(2);
    StepModel m;
    m.student = SegNetwork::create(cfg.arch, 1 + sched.new_class_count(0), init);
    StepContext ctx;
    ctx.schedule = &sched;
    train_step(m, filter_and_relabel(pool, sched, 0), cfg, rng, ctx);
    return m.student;
  }

  std::set<std::string> executed_at(int t, const SegNetwork& prev) {
    StepModel m = t == 0 ? StepModel{SegNetwork(), prev.clone()}
                         : make_step_model(prev, sched.new_class_count(t), cfg.transition);
    const auto ds = filter_and_relabel(pool, sched, t);
    std::vector<const Scene*> batch;
    for (std::size_t i = 0; i < std::min<std::size_t>(4, ds.scenes.size()); ++i) batch.push_back(&ds.scenes[i]);
    Rng rng(3);
    return compute_batch_loss(m, scenes_to_tensor(batch), scenes_to_labels(batch, sched.channel_of_class(t)),
                              sched.partition(t), t == 0, cfg, rng)
        .executed;
  }
};

std::vector<Real> flat_params(const SegNetwork& net) {
  std::vector<Real> out;
  for (const auto& p : net.parameters()) out.insert(out.end(), p.data().begin(), p.data().end());
  return out;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("zero learning rate leaves every parameter unchanged") {
  Fixture f("lr0", "finetune");
  const SegNetwork prev = f.trained_step0();
  f.cfg.lr_next = 0.0;
  StepModel m = make_step_model(prev, f.sched.new_class_count(1), f.cfg.transition);
  const auto before = flat_params(m.student);
  Rng rng(5);
  StepContext ctx;
  ctx.schedule = &f.sched;
  ctx.step = 1;
  train_step(m, filter_and_relabel(f.pool, f.sched, 1), f.cfg, rng, ctx);
  CHECK(flat_params(m.student) == before);
}

TEST_CASE("teacher and frozen branches are untouched by a step") {
  Fixture f("freeze");
  const SegNetwork prev = f.trained_step0();
  StepModel m = make_step_model(prev, f.sched.new_class_count(1), f.cfg.transition);
  const auto teacher = m.teacher.parameter_hash();
  const auto frozen = m.student.frozen_hash();
  const auto student = m.student.parameter_hash();
  Rng rng(6);
  StepContext ctx;
  ctx.schedule = &f.sched;
  ctx.step = 1;
  const auto hist = train_step(m, filter_and_relabel(f.pool, f.sched, 1), f.cfg, rng, ctx);
  CHECK(m.teacher.parameter_hash() == teacher);
  CHECK(m.teacher.parameter_hash() == prev.parameter_hash());
  CHECK(m.student.frozen_hash() == frozen);
  CHECK(m.student.parameter_hash() != student);

  const std::size_t n = filter_and_relabel(f.pool, f.sched, 1).scenes.size();
  const std::size_t per_epoch = (n + f.cfg.batch_size - 1) / f.cfg.batch_size;
  CHECK(hist.iterations.size() == per_epoch * f.cfg.epochs);
  for (const auto& it : hist.iterations) CHECK(std::isfinite(it.total));
  CHECK(hist.epochs.size() == static_cast<std::size_t>(f.cfg.epochs));
}

TEST_CASE("executed loss terms per method") {
  std::map<std::string, std::set<std::string>> at1;
  std::set<std::string> at0;
  for (const char* m : {"finetune", "lwf_logit_kd", "mib", "rc_only", "pcd_only", "rc_pcd"}) {
    Fixture f(std::string("terms_") + m, m);
    const SegNetwork prev = f.trained_step0();
    at1[m] = f.executed_at(1, prev);
    if (std::string(m) == "rc_pcd") at0 = f.executed_at(0, prev);
  }
  using S = std::set<std::string>;
  CHECK(at0 == S{"ce"});
  CHECK(at1["finetune"] == S{"ce"});
  CHECK(at1["lwf_logit_kd"] == S{"ce", "kd"});
  CHECK(at1["mib"] == S{"unce", "unkd"});
  CHECK(at1["rc_only"] == at1["mib"]);
  CHECK(at1["pcd_only"] == S{"unce", "unkd", "skd", "ckd"});
  S composed = at1["rc_only"];
  composed.insert(at1["pcd_only"].begin(), at1["pcd_only"].end());
  CHECK(at1["rc_pcd"] == composed);
}

TEST_CASE("pooling variants record their own term") {
  for (const char* v : {"strip", "max", "gap", "none"}) {
    Fixture f(std::string("variant_") + v);
    f.cfg.apply_override(std::string("distill.variant=") + v);
    const SegNetwork prev = f.trained_step0();
    const auto terms = f.executed_at(1, prev);
    CHECK(terms.count("skd") == 0);
    CHECK(terms.size() == 3);
  }
}

TEST_CASE("larger gamma lowers the distillation loss on a probe batch") {
  Fixture f("gamma");
  f.cfg.epochs = 3;
  const SegNetwork prev = f.trained_step0();
  const auto ds = filter_and_relabel(f.pool, f.sched, 1);
  std::vector<const Scene*> probe;
  for (std::size_t i = 0; i < 6; ++i) probe.push_back(&f.pool[i]);
  const Tensor x = scenes_to_tensor(probe);
  std::vector<Real> losses;
  for (Real g : {0.01, 0.1, 1.0}) {
    f.cfg.loss.gamma = g;
    StepModel m = make_step_model(prev, f.sched.new_class_count(1), f.cfg.transition);
    Rng rng(8);
    StepContext ctx;
    ctx.schedule = &f.sched;
    ctx.step = 1;
    train_step(m, ds, f.cfg, rng, ctx);
    losses.push_back(pcd_loss(m.teacher.forward_eval(x).taps, m.student.forward_eval(x).taps,
                              f.cfg.distill)
                         .item());
  }
  CHECK(losses[1] < losses[0]);
  CHECK(losses[2] < losses[1]);
}

TEST_CASE("non-finite loss aborts with a dump") {
  Fixture f("nan");
  f.cfg.lr_first = 1e30;
  RunOptions opts;
  opts.quiet = true;
  CHECK_THROWS_AS(run_experiment(f.cfg, opts), NonFiniteLossError);
  const auto run = std::filesystem::path(f.cfg.outdir) / f.cfg.run_id();
  CHECK(std::filesystem::exists(run / "nan_dump.txt"));
  CHECK(std::filesystem::exists(run / "results.csv"));
}

TEST_CASE("checkpoints round-trip and guard the config hash") {
  Fixture f("ckpt");
  Checkpoint ck;
  ck.config_hash = f.cfg.hash();
  ck.state.step_index = 1;
  ck.state.epoch = 2;
  ck.state.rng_state = Rng(4).serialize();
  ck.state.velocity = {{1.0, -2.5}, {}};
  ck.state.optimizer.iteration = 17;
  ck.networks.emplace("student", f.trained_step0());
  ck.history.iterations.push_back({1, 0, 0, 0.01, 2.0, 1.0, 0.5, 0.25, 0.125});
  ck.history.executed_terms = {"unce", "skd"};
  const auto path = std::filesystem::path(f.cfg.outdir) / "x.ckpt";
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path, f.cfg.hash());
  CHECK(back.networks.at("student").parameter_hash() == ck.networks.at("student").parameter_hash());
  CHECK(back.state.velocity == ck.state.velocity);
  CHECK(back.state.optimizer.iteration == 17);
  CHECK(back.state.rng_state == ck.state.rng_state);
  CHECK(back.history.executed_terms == ck.history.executed_terms);
  CHECK(back.history.iterations.at(0).ckd == 0.125);
  CHECK_THROWS(load_checkpoint(path, f.cfg.hash() + 1));
  CHECK_NOTHROW(load_checkpoint(path, f.cfg.hash() + 1, true));
  write_text(path, "garbage");
  CHECK_THROWS(load_checkpoint(path, f.cfg.hash()));
}

TEST_CASE("runs are deterministic and seed-sensitive") {
  auto cfg = tiny_config(temp_dir("det_a"));
  RunOptions opts;
  opts.quiet = true;
  const auto a = run_experiment(cfg, opts);
  cfg.outdir = temp_dir("det_b").string();
  const auto b = run_experiment(cfg, opts);
  CHECK(read_text(a.run_dir / "results.csv") == read_text(b.run_dir / "results.csv"));
  CHECK(read_text(a.run_dir / "history.csv") == read_text(b.run_dir / "history.csv"));
  cfg.seed = 2;
  const auto c = run_experiment(cfg, opts);
  CHECK(read_text(a.run_dir / "history.csv") != read_text(c.run_dir / "history.csv"));

  const CsvTable t = read_csv(a.run_dir / "results.csv");
  CHECK(t.rows.size() == 3 * 3);
  CHECK(t.column("format_version") == 0);
  for (const char* f : {"config.resolved", "curves.csv", "iou_step2.csv", "checkpoints/step2.ckpt",
                        "plots/miou_vs_step.svg", "plots/loss.svg"})
    CHECK(std::filesystem::exists(a.run_dir / f));
  CHECK(ExperimentConfig::parse(read_text(a.run_dir / "config.resolved")).hash() == cfg.hash());
}

TEST_CASE("an interrupted run resumes bit-identically") {
  auto cfg = tiny_config(temp_dir("resume_ref"));
  RunOptions quiet;
  quiet.quiet = true;
  const auto ref = run_experiment(cfg, quiet);

  for (const auto& [stop_step, stop_epoch] : std::vector<std::pair<int, int>>{{1, 1}, {2, 2}}) {
    cfg.outdir = temp_dir("resume_" + std::to_string(stop_step)).string();
    RunOptions interrupt = quiet;
    interrupt.on_epoch = [&, s = stop_step, e = stop_epoch](int step, int epoch) {
      if (step == s && epoch == e) throw Error("interrupted");
    };
    CHECK_THROWS(run_experiment(cfg, interrupt));
    const auto resumed = run_experiment(cfg, quiet);
    CHECK(read_text(resumed.run_dir / "results.csv") == read_text(ref.run_dir / "results.csv"));
    CHECK(read_text(resumed.run_dir / "history.csv") == read_text(ref.run_dir / "history.csv"));
    CHECK(resumed.final_network.parameter_hash() == ref.final_network.parameter_hash());
  }
}

TEST_CASE("joint training is a single step over every class") {
  auto cfg = tiny_config(temp_dir("joint"));
  cfg.apply_override("schedule.joint=true");
  cfg.apply_override("method.name=finetune");
  RunOptions opts;
  opts.quiet = true;
  const auto r = run_experiment(cfg, opts);
  REQUIRE(r.steps.size() == 1);
  CHECK(r.final_network.head_channels() == 5);
}

TEST_CASE("inference cost is the same after every step of a run") {
  auto cfg = tiny_config(temp_dir("macs"));
  RunOptions opts;
  opts.quiet = true;
  const auto r = run_experiment(cfg, opts);
  for (const auto& s : r.steps) {
    CHECK(s.inference_macs == r.steps.front().inference_macs);
    CHECK(s.inference_params == r.steps.front().inference_params);
  }
}

}  // TEST_SUITE
