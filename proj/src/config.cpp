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

#include "rcil/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace rcil {

std::string to_string(Method m) {
  switch (m) {
    case Method::kFinetune: return "finetune";
    case Method::kLwfLogitKd: return "lwf_logit_kd";
    case Method::kMib: return "mib";
    case Method::kRcOnly: return "rc_only";
    case Method::kPcdOnly: return "pcd_only";
    case Method::kRcPcd: return "rc_pcd";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::kFinetune, Method::kLwfLogitKd, Method::kMib, Method::kRcOnly,
                   Method::kPcdOnly, Method::kRcPcd})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown method '" + name +
                    "' (expected finetune, lwf_logit_kd, mib, rc_only, pcd_only, rc_pcd)");
}

MethodSpec MethodSpec::of(Method m) {
  MethodSpec s;
  s.name = m;
  switch (m) {
    case Method::kFinetune: s.rc = false; s.pcd = false; s.unbiased = false; s.logit_kd = false; break;
    case Method::kLwfLogitKd: s.rc = false; s.pcd = false; s.unbiased = false; s.logit_kd = true; break;
    case Method::kMib: s.rc = false; s.pcd = false; s.unbiased = true; s.logit_kd = true; break;
    case Method::kRcOnly: s.rc = true; s.pcd = false; s.unbiased = true; s.logit_kd = true; break;
    case Method::kPcdOnly: s.rc = false; s.pcd = true; s.unbiased = true; s.logit_kd = true; break;
    case Method::kRcPcd: s.rc = true; s.pcd = true; s.unbiased = true; s.logit_kd = true; break;
  }
  return s;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_real(Real v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

Real parse_real(const std::string& key, const std::string& v) {
  Real out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("field '" + key + "': expected a number, got '" + v + "'");
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("field '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

int parse_positive(const std::string& key, const std::string& v) {
  const long long x = parse_int(key, v);
  if (x < 1 || x > 1'000'000'000)
    throw ConfigError("field '" + key + "': expected a positive integer, got '" + v + "'");
  return static_cast<int>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("field '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& s : split_list(v)) out.push_back(parse_positive(key, s));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, bool>) out += v[i] ? "1" : "0";
    else out += std::to_string(v[i]);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = {
      {"schedule.mode", [](const C& c) { return c.mode; },
       [](C& c, const std::string& v) {
         if (v != "class" && v != "domain")
           throw ConfigError("field 'schedule.mode': expected class or domain, got '" + v + "'");
         c.mode = v;
       }},
      {"schedule.notation", [](const C& c) { return c.notation; },
       [](C& c, const std::string& v) {
         try {
           ScheduleNotation::parse(v);
         } catch (const Error& e) {
           throw ConfigError(std::string("field 'schedule.notation': ") + e.what());
         }
         c.notation = v;
       }},
      {"schedule.labeling", [](const C& c) { return to_string(c.labeling); },
       [](C& c, const std::string& v) {
         try {
           c.labeling = parse_labeling(v);
         } catch (const Error& e) {
           throw ConfigError(std::string("field 'schedule.labeling': ") + e.what());
         }
       }},
      {"schedule.class_order", [](const C& c) { return c.class_order; },
       [](C& c, const std::string& v) { c.class_order = v; }},
      {"schedule.joint", [](const C& c) { return std::string(c.joint ? "true" : "false"); },
       [](C& c, const std::string& v) { c.joint = parse_bool("schedule.joint", v); }},
      {"schedule.n_domains", [](const C& c) { return std::to_string(c.n_domains); },
       [](C& c, const std::string& v) { c.n_domains = parse_positive("schedule.n_domains", v); }},

      {"data.n_classes", [](const C& c) { return std::to_string(c.n_classes); },
       [](C& c, const std::string& v) { c.n_classes = parse_positive("data.n_classes", v); }},
      {"data.image_size", [](const C& c) { return std::to_string(c.image_size); },
       [](C& c, const std::string& v) { c.image_size = parse_positive("data.image_size", v); }},
      {"data.train_scenes", [](const C& c) { return std::to_string(c.train_scenes); },
       [](C& c, const std::string& v) { c.train_scenes = parse_positive("data.train_scenes", v); }},
      {"data.val_scenes", [](const C& c) { return std::to_string(c.val_scenes); },
       [](C& c, const std::string& v) { c.val_scenes = parse_positive("data.val_scenes", v); }},
      {"data.min_shapes", [](const C& c) { return std::to_string(c.min_shapes); },
       [](C& c, const std::string& v) { c.min_shapes = parse_positive("data.min_shapes", v); }},
      {"data.max_shapes", [](const C& c) { return std::to_string(c.max_shapes); },
       [](C& c, const std::string& v) { c.max_shapes = parse_positive("data.max_shapes", v); }},
      {"data.holdout_fraction", [](const C& c) { return fmt_real(c.holdout_fraction); },
       [](C& c, const std::string& v) {
         const Real x = parse_real("data.holdout_fraction", v);
         if (x < 0 || x >= 1) throw ConfigError("field 'data.holdout_fraction': must be in [0, 1)");
         c.holdout_fraction = x;
       }},

      {"model.stage_channels",
       [](const C& c) {
         std::vector<int> ch;
         for (const auto& s : c.arch.stages) ch.push_back(s.channels);
         return join(ch);
       },
       [](C& c, const std::string& v) {
         const auto ch = parse_int_list("model.stage_channels", v);
         if (ch.empty()) throw ConfigError("field 'model.stage_channels': needs at least one stage");
         const int blocks = c.arch.stages.empty() ? 2 : c.arch.stages.front().n_blocks;
         c.arch.stages.clear();
         for (int x : ch) c.arch.stages.push_back({blocks, x, true});
       }},
      {"model.blocks_per_stage",
       [](const C& c) { return std::to_string(c.arch.stages.front().n_blocks); },
       [](C& c, const std::string& v) {
         const int b = parse_positive("model.blocks_per_stage", v);
         for (auto& s : c.arch.stages) s.n_blocks = b;
       }},
      {"model.decoder_channels", [](const C& c) { return std::to_string(c.arch.decoder_channels); },
       [](C& c, const std::string& v) {
         c.arch.decoder_channels = parse_positive("model.decoder_channels", v);
       }},
      {"model.head_init_shift", [](const C& c) { return fmt_real(c.arch.head_init_shift); },
       [](C& c, const std::string& v) { c.arch.head_init_shift = parse_real("model.head_init_shift", v); }},

      {"method.name", [](const C& c) { return to_string(c.method.name); },
       [](C& c, const std::string& v) {
         c.method = MethodSpec::of(parse_method(v));
         c.arch.rc = c.method.rc;
       }},
      {"rc.merge", [](const C& c) { return std::string(c.transition.merge ? "true" : "false"); },
       [](C& c, const std::string& v) { c.transition.merge = parse_bool("rc.merge", v); }},
      {"rc.freeze", [](const C& c) { return std::string(c.transition.freeze ? "true" : "false"); },
       [](C& c, const std::string& v) { c.transition.freeze = parse_bool("rc.freeze", v); }},
      {"rc.drop_path", [](const C& c) { return std::string(c.drop_path ? "true" : "false"); },
       [](C& c, const std::string& v) { c.drop_path = parse_bool("rc.drop_path", v); }},
      {"rc.merge_weights",
       [](const C& c) {
         return fmt_real(c.transition.merge_weights[0]) + "," + fmt_real(c.transition.merge_weights[1]);
       },
       [](C& c, const std::string& v) {
         const auto parts = split_list(v);
         if (parts.size() != 2) throw ConfigError("field 'rc.merge_weights': expected two numbers");
         c.transition.merge_weights = {parse_real("rc.merge_weights", parts[0]),
                                       parse_real("rc.merge_weights", parts[1])};
       }},

      {"loss.lambda", [](const C& c) { return fmt_real(c.loss.lambda); },
       [](C& c, const std::string& v) {
         c.loss.lambda = parse_real("loss.lambda", v);
         if (c.loss.lambda <= 0) throw ConfigError("field 'loss.lambda': must be positive");
       }},
      {"loss.gamma", [](const C& c) { return fmt_real(c.loss.gamma); },
       [](C& c, const std::string& v) {
         c.loss.gamma = parse_real("loss.gamma", v);
         if (c.loss.gamma <= 0) throw ConfigError("field 'loss.gamma': must be positive");
       }},
      {"loss.count_background",
       [](const C& c) { return std::string(c.loss.count_background ? "true" : "false"); },
       [](C& c, const std::string& v) { c.loss.count_background = parse_bool("loss.count_background", v); }},

      {"distill.variant", [](const C& c) { return to_string(c.distill.variant); },
       [](C& c, const std::string& v) {
         try {
           c.distill.variant = parse_distill_variant(v);
         } catch (const Error& e) {
           throw ConfigError(std::string("field 'distill.variant': ") + e.what());
         }
       }},
      {"distill.spatial_kernels", [](const C& c) { return join(c.distill.pool.spatial_kernels); },
       [](C& c, const std::string& v) {
         c.distill.pool.spatial_kernels = parse_int_list("distill.spatial_kernels", v);
       }},
      {"distill.spatial_stride", [](const C& c) { return std::to_string(c.distill.pool.spatial_stride); },
       [](C& c, const std::string& v) {
         c.distill.pool.spatial_stride = parse_positive("distill.spatial_stride", v);
       }},
      {"distill.channel_kernels", [](const C& c) { return join(c.distill.pool.channel_kernels); },
       [](C& c, const std::string& v) {
         c.distill.pool.channel_kernels = parse_int_list("distill.channel_kernels", v);
       }},
      {"distill.channel_stride", [](const C& c) { return std::to_string(c.distill.pool.channel_stride); },
       [](C& c, const std::string& v) {
         c.distill.pool.channel_stride = parse_positive("distill.channel_stride", v);
       }},
      {"distill.layer_mask", [](const C& c) { return join(c.distill.layer_mask); },
       [](C& c, const std::string& v) {
         std::vector<bool> mask;
         for (const auto& s : split_list(v)) mask.push_back(parse_bool("distill.layer_mask", s));
         c.distill.layer_mask = mask;
       }},
      {"pcd.cascade", [](const C& c) { return std::string(c.distill.cascade ? "true" : "false"); },
       [](C& c, const std::string& v) { c.distill.cascade = parse_bool("pcd.cascade", v); }},

      {"train.batch_size", [](const C& c) { return std::to_string(c.batch_size); },
       [](C& c, const std::string& v) { c.batch_size = parse_positive("train.batch_size", v); }},
      {"train.epochs", [](const C& c) { return std::to_string(c.epochs); },
       [](C& c, const std::string& v) { c.epochs = parse_positive("train.epochs", v); }},
      {"train.lr_first", [](const C& c) { return fmt_real(c.lr_first); },
       [](C& c, const std::string& v) { c.lr_first = parse_real("train.lr_first", v); }},
      {"train.lr_next", [](const C& c) { return fmt_real(c.lr_next); },
       [](C& c, const std::string& v) { c.lr_next = parse_real("train.lr_next", v); }},
      {"train.momentum", [](const C& c) { return fmt_real(c.momentum); },
       [](C& c, const std::string& v) {
         c.momentum = parse_real("train.momentum", v);
         if (c.momentum < 0 || c.momentum >= 1)
           throw ConfigError("field 'train.momentum': must be in [0, 1)");
       }},
      {"train.poly_power", [](const C& c) { return fmt_real(c.poly_power); },
       [](C& c, const std::string& v) { c.poly_power = parse_real("train.poly_power", v); }},
      {"train.hflip", [](const C& c) { return std::string(c.hflip ? "true" : "false"); },
       [](C& c, const std::string& v) { c.hflip = parse_bool("train.hflip", v); }},

      {"train.holdout_every", [](const C& c) { return std::to_string(c.holdout_every); },
       [](C& c, const std::string& v) {
         const long long x = parse_int("train.holdout_every", v);
         if (x < 0) throw ConfigError("field 'train.holdout_every': must be non-negative");
         c.holdout_every = static_cast<int>(x);
       }},

      {"run.seed", [](const C& c) { return std::to_string(c.seed); },
       [](C& c, const std::string& v) {
         const long long s = parse_int("run.seed", v);
         if (s < 0) throw ConfigError("field 'run.seed': must be non-negative");
         c.seed = static_cast<std::uint64_t>(s);
       }},
      {"run.outdir", [](const C& c) { return c.outdir; },
       [](C& c, const std::string& v) { c.outdir = v; }},
  };
  return table;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      try {
        f.set(*this, value);
      } catch (const Error& e) {
        const std::string msg = e.what();
        if (msg.find(key) != std::string::npos) throw;
        throw ConfigError("field '" + key + "': " + msg);
      }
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  std::set<std::string> seen;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    try {
      cfg.set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::to_text() const {
  std::string out = "# rcil experiment config\n";
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

std::vector<std::string> ExperimentConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

std::uint64_t ExperimentConfig::hash() const {
  ExperimentConfig c = *this;
  c.seed = 0;
  c.outdir.clear();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : c.to_text()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::string ExperimentConfig::run_id() const {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << hash();
  return os.str() + "-s" + std::to_string(seed);
}

TaskSchedule ExperimentConfig::make_schedule() const {
  if (mode == "domain") return build_domain_schedule(joint ? std::to_string(n_domains) + "-0" : notation,
                                                     n_domains, n_classes);
  std::vector<int> order;
  if (class_order.size() == 1 && class_order[0] >= 'A' && class_order[0] <= 'E') {
    order = class_order_permutation(class_order[0], n_classes);
  } else {
    for (const auto& s : split_list(class_order)) order.push_back(static_cast<int>(parse_int("schedule.class_order", s)));
  }
  const std::string nt = joint ? std::to_string(n_classes) + "-0" : notation;
  return build_schedule(nt, n_classes, labeling, order);
}

SynthSceneSpec ExperimentConfig::scene_spec(bool validation, int domain_id) const {
  SynthSceneSpec s;
  s.seed = seed * 0x9e3779b97f4a7c15ull + (validation ? 0x7777ull : 0x1111ull);
  s.height = image_size;
  s.width = image_size;
  s.n_classes = n_classes;
  s.min_shapes = min_shapes;
  s.max_shapes = max_shapes;
  s.domain_id = domain_id;
  return s;
}

}  // namespace rcil
