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
#include <string>
#include <vector>

#include "rcil/cl_losses.hpp"
#include "rcil/distill.hpp"
#include "rcil/protocol.hpp"
#include "rcil/seg_model.hpp"

namespace rcil {

enum class Method { kFinetune, kLwfLogitKd, kMib, kRcOnly, kPcdOnly, kRcPcd };

std::string to_string(Method m);
Method parse_method(const std::string& name);

/// Which ingredients a method switches on.
struct MethodSpec {
  Method name = Method::kRcPcd;
  bool rc = true;         // two-branch blocks with merge/freeze transitions
  bool pcd = true;        // pooled feature distillation
  bool unbiased = true;   // background-absorbing CE and KD
  bool logit_kd = true;   // any logit distillation from the teacher

  static MethodSpec of(Method m);
};

/// Every knob of a run. Serialized as flat `section.key = value` lines.
struct ExperimentConfig {
  // schedule
  std::string mode = "class";  // class | domain
  std::string notation = "6-1";
  Labeling labeling = Labeling::kOverlapped;
  std::string class_order = "A";  // A-E or a comma-separated permutation
  bool joint = false;             // single step over every class
  int n_domains = 6;

  // synthetic data
  int n_classes = 10;
  int image_size = 64;
  int train_scenes = 200;
  int val_scenes = 50;
  int min_shapes = 1;
  int max_shapes = 3;
  Real holdout_fraction = 0.2;

  // model
  ArchSpec arch;

  // method
  MethodSpec method = MethodSpec::of(Method::kRcPcd);
  TransitionOptions transition;
  bool drop_path = true;

  LossWeights loss;
  DistillConfig distill;

  // optimization
  int batch_size = 8;
  int epochs = 10;
  Real lr_first = 0.1;
  Real lr_next = 0.0025;
  Real momentum = 0.9;
  Real poly_power = 0.9;
  bool hflip = true;
  /// Holdout metric every this many epochs (the last epoch always); 0 = last only.
  int holdout_every = 0;

  std::uint64_t seed = 1;
  std::string outdir = "runs";

  /// Parses `key = value` lines; '#' starts a comment. Unknown keys and
  /// malformed values throw ConfigError naming the field.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::string& path);
  void set(const std::string& key, const std::string& value);
  /// `key=value` form used by --override.
  void apply_override(const std::string& assignment);
  std::string to_text() const;
  /// Hash of the resolved config, excluding seed and output directory.
  std::uint64_t hash() const;
  std::string run_id() const;
  std::vector<std::string> keys() const;

  TaskSchedule make_schedule() const;
  SynthSceneSpec scene_spec(bool validation, int domain_id = 0) const;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace rcil
