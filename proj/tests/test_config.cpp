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
#include "rcil/config.hpp"
#include "rcil/report.hpp"
#include "test_util.hpp"

using namespace rcil;

TEST_SUITE("config") {

TEST_CASE("defaults describe the 6-1 synthetic protocol") {
  const ExperimentConfig cfg;
  const auto sched = cfg.make_schedule();
  CHECK(sched.num_steps() == 5);
  CHECK(sched.n_classes == 10);
  CHECK(sched.labeling == Labeling::kOverlapped);
  CHECK(cfg.method.name == Method::kRcPcd);
  CHECK(cfg.batch_size == 8);
  CHECK(cfg.epochs == 10);
  CHECK(cfg.loss.lambda == 100.0);
}

TEST_CASE("text form round-trips") {
  ExperimentConfig cfg;
  for (const char* o : {"method.name=mib", "loss.gamma=0.0123456789", "distill.layer_mask=1,0,1,1",
                        "schedule.class_order=3,1,2,4,5,6,7,8,9,10", "train.lr_next=1e-7",
                        "rc.merge_weights=0.25,0.75", "data.holdout_fraction=0.1"})
    cfg.apply_override(o);
  const auto text = cfg.to_text();
  const auto back = ExperimentConfig::parse(text);
  CHECK(back.to_text() == text);
  CHECK(back.hash() == cfg.hash());
  CHECK(back.loss.gamma == 0.0123456789);
  CHECK(back.lr_next == 1e-7);
  CHECK(back.method.name == Method::kMib);
  CHECK_FALSE(back.method.rc);
  for (const auto& key : cfg.keys()) CHECK(text.find(key + " = ") != std::string::npos);
}

TEST_CASE("comments and whitespace") {
  const auto cfg = ExperimentConfig::parse("# a comment\n\n  train.epochs =  3  # trailing\nrun.seed=5\n");
  CHECK(cfg.epochs == 3);
  CHECK(cfg.seed == 5);
}

TEST_CASE("errors name the field") {
  auto message = [](const std::string& text) {
    try {
      (void)ExperimentConfig::parse(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("train.epochs = x").find("train.epochs") != std::string::npos);
  CHECK(message("nope.key = 1").find("nope.key") != std::string::npos);
  CHECK(message("method.name = sgd").find("method.name") != std::string::npos);
  CHECK(message("train.epochs").find("=") != std::string::npos);
  CHECK(message("loss.lambda = -1").find("loss.lambda") != std::string::npos);
  ExperimentConfig cfg;
  CHECK_THROWS_AS(cfg.apply_override("train.epochs"), ConfigError);
}

TEST_CASE("hash ignores seed and outdir, run id includes the seed") {
  ExperimentConfig a, b;
  b.seed = 7;
  b.outdir = "/elsewhere";
  CHECK(a.hash() == b.hash());
  CHECK(a.run_id() != b.run_id());
  CHECK(b.run_id().size() == 16 + 3);
  b.apply_override("loss.gamma=0.02");
  CHECK(a.hash() != b.hash());
}

TEST_CASE("method flags compose") {
  const auto rc = MethodSpec::of(Method::kRcOnly), pcd = MethodSpec::of(Method::kPcdOnly),
             full = MethodSpec::of(Method::kRcPcd), mib = MethodSpec::of(Method::kMib);
  CHECK(full.rc == (rc.rc || pcd.rc));
  CHECK(full.pcd == (rc.pcd || pcd.pcd));
  CHECK((full.unbiased && rc.unbiased && pcd.unbiased && mib.unbiased));
  CHECK_FALSE(MethodSpec::of(Method::kFinetune).logit_kd);
  CHECK_FALSE(MethodSpec::of(Method::kLwfLogitKd).unbiased);
  for (Method m : {Method::kFinetune, Method::kLwfLogitKd, Method::kMib, Method::kRcOnly,
                   Method::kPcdOnly, Method::kRcPcd})
    CHECK(parse_method(to_string(m)) == m);
}

TEST_CASE("schedule variants") {
  ExperimentConfig cfg;
  cfg.apply_override("schedule.joint=true");
  CHECK(cfg.make_schedule().num_steps() == 1);
  cfg.apply_override("schedule.joint=false");
  cfg.apply_override("schedule.class_order=C");
  CHECK(cfg.make_schedule().class_order == class_order_permutation('C', 10));
  cfg.apply_override("schedule.class_order=1,2,3");
  CHECK_THROWS_AS(cfg.make_schedule(), Error);
  cfg.apply_override("schedule.class_order=A");
  cfg.apply_override("schedule.mode=domain");
  cfg.apply_override("schedule.notation=2-2");
  const auto d = cfg.make_schedule();
  CHECK(d.mode == ScheduleMode::kDomainIncremental);
  CHECK(d.num_steps() == 3);
}

TEST_CASE("load reads a file") {
  const auto dir = test::temp_dir("config");
  const auto path = dir / "c.cfg";
  write_text(path, "train.epochs = 4\nmethod.name = finetune\n");
  const auto cfg = ExperimentConfig::load(path.string());
  CHECK(cfg.epochs == 4);
  CHECK(cfg.method.name == Method::kFinetune);
  CHECK_THROWS_AS(ExperimentConfig::load((dir / "missing.cfg").string()), ConfigError);
}

}  // TEST_SUITE
