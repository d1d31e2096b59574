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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>

#include "rcil/report.hpp"
#include "rcil/trainer.hpp"

namespace rcil {

namespace {

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<Scene> cached_scenes(const std::filesystem::path& cache_root, const SynthSceneSpec& spec,
                                 std::uint64_t first, std::size_t count) {
  const auto dir = cache_root / (hex64(spec.hash()) + "-" + std::to_string(first) + "-" +
                                 std::to_string(count));
  if (std::filesystem::exists(dir / "manifest.txt")) {
    try {
      auto scenes = read_dataset_cache(dir, spec);
      if (scenes.size() == count) return scenes;
    } catch (const Error&) {
      // stale cache: regenerate below
    }
  }
  auto scenes = generate_scenes(spec, first, count);
  write_dataset_cache(dir, spec, scenes);
  return scenes;
}

struct Pools {
  std::vector<Scene> train;
  std::vector<Scene> holdout;
  std::vector<Scene> val;
};

Pools build_pools(const ExperimentConfig& cfg) {
  const auto cache_root = std::filesystem::path(cfg.outdir) / "cache";
  Pools p;
  std::vector<Scene> raw;
  if (cfg.mode == "domain") {
    const std::size_t per_train = (cfg.train_scenes + cfg.n_domains - 1) / cfg.n_domains;
    const std::size_t per_val = (cfg.val_scenes + cfg.n_domains - 1) / cfg.n_domains;
    for (int d = 0; d < cfg.n_domains; ++d) {
      auto tr = cached_scenes(cache_root, cfg.scene_spec(false, d), 0, per_train);
      raw.insert(raw.end(), tr.begin(), tr.end());
      auto va = cached_scenes(cache_root, cfg.scene_spec(true, d), 0, per_val);
      p.val.insert(p.val.end(), va.begin(), va.end());
    }
  } else {
    raw = cached_scenes(cache_root, cfg.scene_spec(false), 0, cfg.train_scenes);
    p.val = cached_scenes(cache_root, cfg.scene_spec(true), 0, cfg.val_scenes);
  }
  std::vector<std::size_t> idx(raw.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng split(cfg.seed ^ 0x401d5eedull);
  split.shuffle(idx.begin(), idx.end());
  const auto n_hold = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * raw.size()));
  std::vector<bool> is_hold(raw.size(), false);
  for (std::size_t i = 0; i < n_hold; ++i) is_hold[idx[i]] = true;
  for (std::size_t i = 0; i < raw.size(); ++i)
    (is_hold[i] ? p.holdout : p.train).push_back(std::move(raw[i]));
  return p;
}

std::vector<Scene> seen_val(const Pools& pools, const TaskSchedule& sched, int t) {
  if (sched.mode != ScheduleMode::kDomainIncremental) return pools.val;
  std::vector<bool> seen(256, false);
  for (int s = 0; s <= t; ++s)
    for (int d : sched.steps[s]) seen[d] = true;
  std::vector<Scene> out;
  for (const auto& sc : pools.val)
    if (seen[sc.domain_id]) out.push_back(sc);
  return out;
}

StepResult make_result(const SegNetwork& net, const Pools& pools, const TaskSchedule& sched,
                       int t, std::size_t train_images, const ExperimentConfig& cfg) {
  StepResult r;
  r.step = t;
  r.train_images = train_images;
  r.report = evaluate(net, seen_val(pools, sched, t), sched, t);
  r.inference_macs = inference_macs(net, cfg.image_size, cfg.image_size);
  r.inference_params = net.merged().parameter_count(false);
  return r;
}

std::filesystem::path step_ckpt(const std::filesystem::path& dir, int t) {
  return dir / ("step" + std::to_string(t) + ".ckpt");
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  cfg.arch.rc = cfg.method.rc;
  const TaskSchedule sched = cfg.make_schedule();
  const std::uint64_t chash = cfg.hash();

  ExperimentResult res;
  res.run_id = cfg.run_id();
  res.run_dir = std::filesystem::path(cfg.outdir) / res.run_id;
  const auto ckdir = res.run_dir / "checkpoints";
  std::filesystem::create_directories(ckdir);
  write_text(res.run_dir / "config.resolved", cfg.to_text());

  const Pools pools = build_pools(cfg);
  Rng rng(cfg.seed);
  Rng init_rng(cfg.seed * 0x2545f4914f6cdd1dull + 0x1417ull);

  auto flush = [&]() {
    write_text(res.run_dir / "results.csv", results_csv(cfg, res.steps));
    write_text(res.run_dir / "curves.csv", curves_csv(res.steps));
    write_text(res.run_dir / "history.csv", history_csv(res.history));
  };

  // Resume: replay completed steps from their checkpoints.
  int start = 0;
  SegNetwork prev;
  std::optional<Checkpoint> mid;
  if (opts.resume) {
    while (start < sched.num_steps() && std::filesystem::exists(step_ckpt(ckdir, start))) {
      Checkpoint ck = load_checkpoint(step_ckpt(ckdir, start), chash, opts.force);
      prev = ck.networks.at("student");
      rng.deserialize(ck.state.rng_state);
      res.history = ck.history;
      const StepDataset ds = filter_and_relabel(pools.train, sched, start);
      res.steps.push_back(make_result(prev, pools, sched, start, ds.scenes.size(), cfg));
      ++start;
    }
    const auto latest = ckdir / "latest.ckpt";
    if (start < sched.num_steps() && std::filesystem::exists(latest)) {
      Checkpoint ck = load_checkpoint(latest, chash, opts.force);
      if (ck.state.step_index == start && ck.state.epoch < cfg.epochs) mid = std::move(ck);
    }
    if (start > 0 && !opts.quiet)
      std::cerr << "resuming " << res.run_id << " at step " << start << "\n";
  }

  for (int t = start; t < sched.num_steps(); ++t) {
    const StepDataset ds = filter_and_relabel(pools.train, sched, t);
    const StepDataset hold = filter_and_relabel(pools.holdout, sched, t);
    StepModel model;
    TrainState resume_state;
    StepContext ctx;
    if (mid) {
      model.student = mid->networks.at("student");
      if (t > 0) model.teacher = mid->networks.at("teacher");
      resume_state = mid->state;
      rng.deserialize(mid->state.rng_state);
      res.history = mid->history;
      ctx.resume = &resume_state;
      mid.reset();
    } else if (t == 0) {
      model.student = SegNetwork::create(cfg.arch, 1 + sched.new_class_count(0), init_rng);
    } else {
      model = make_step_model(prev, sched.new_class_count(t), cfg.transition);
    }
    ctx.schedule = &sched;
    ctx.step = t;
    ctx.holdout = &hold.scenes;
    ctx.dump_dir = res.run_dir;
    const TrainHistory base = res.history;
    ctx.on_epoch = [&](const TrainState& st, const StepModel& m, const TrainHistory& h) {
      Checkpoint ck;
      ck.config_hash = chash;
      ck.state = st;
      ck.networks.emplace("student", m.student);
      if (t > 0) ck.networks.emplace("teacher", m.teacher);
      ck.history = base;
      ck.history.iterations.insert(ck.history.iterations.end(), h.iterations.begin(),
                                   h.iterations.end());
      ck.history.epochs.insert(ck.history.epochs.end(), h.epochs.begin(), h.epochs.end());
      ck.history.executed_terms.insert(h.executed_terms.begin(), h.executed_terms.end());
      save_checkpoint(ckdir / "latest.ckpt", ck);
      if (opts.on_epoch) opts.on_epoch(t, st.epoch);
    };

    TrainHistory h;
    try {
      h = train_step(model, ds, cfg, rng, ctx);
    } catch (...) {
      flush();
      throw;
    }
    res.history.iterations.insert(res.history.iterations.end(), h.iterations.begin(),
                                  h.iterations.end());
    res.history.epochs.insert(res.history.epochs.end(), h.epochs.begin(), h.epochs.end());
    res.history.executed_terms.insert(h.executed_terms.begin(), h.executed_terms.end());

    prev = std::move(model.student);
    res.steps.push_back(make_result(prev, pools, sched, t, ds.scenes.size(), cfg));
    write_text(res.run_dir / ("iou_step" + std::to_string(t) + ".csv"),
               res.steps.back().report.to_csv());

    Checkpoint ck;
    ck.config_hash = chash;
    ck.state.step_index = t;
    ck.state.epoch = cfg.epochs;
    ck.state.rng_state = rng.serialize();
    ck.state.rng_seed = cfg.seed;
    ck.networks.emplace("student", prev);
    ck.history = res.history;
    save_checkpoint(step_ckpt(ckdir, t), ck);
    flush();
    if (!opts.quiet) {
      const auto& r = res.steps.back().report;
      std::fprintf(stderr, "[%s] step %d/%d  images %zu  mIoU old %.4f new %.4f all %.4f\n",
                   res.run_id.c_str(), t + 1, sched.num_steps(), ds.scenes.size(), r.miou_old,
                   r.miou_new, r.miou_all);
    }
  }
  // Completed-step reports that were replayed still need their per-step files.
  for (const auto& s : res.steps)
    write_text(res.run_dir / ("iou_step" + std::to_string(s.step) + ".csv"), s.report.to_csv());
  flush();
  if (opts.write_plots) render_run_plots(res.run_dir);
  res.final_network = std::move(prev);
  return res;
}

}  // namespace rcil
