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

#include "rcil/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "rcil/trainer.hpp"

namespace rcil {

namespace oracle {

std::vector<Real> conv2d(const std::vector<Real>& x, Shape4 xs, const std::vector<Real>& w,
                         Shape4 ws, const std::vector<Real>& bias, int stride, int pad) {
  const int OH = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int OW = (xs.w + 2 * pad - ws.w) / stride + 1;
  std::vector<Real> out(static_cast<std::size_t>(xs.n) * ws.n * OH * OW, 0.0);
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int y = 0; y < OH; ++y)
        for (int xo = 0; xo < OW; ++xo) {
          Real acc = bias.empty() ? 0.0 : bias[o];
          for (int c = 0; c < xs.c; ++c)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int iy = y * stride - pad + ky, ix = xo * stride - pad + kx;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += w[((o * ws.c + c) * ws.h + ky) * ws.w + kx] *
                       x[((static_cast<std::size_t>(n) * xs.c + c) * xs.h + iy) * xs.w + ix];
              }
          out[((static_cast<std::size_t>(n) * ws.n + o) * OH + y) * OW + xo] = acc;
        }
  return out;
}

std::vector<Real> batch_norm_eval(const std::vector<Real>& x, Shape4 xs,
                                  const BatchNormParams& p) {
  std::vector<Real> out(x.size());
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int i = 0; i < xs.h * xs.w; ++i) {
        const std::size_t k = (static_cast<std::size_t>(n) * xs.c + c) * xs.h * xs.w + i;
        out[k] = p.gamma.at(0, c, 0, 0) * (x[k] - p.running_mean[c]) /
                     std::sqrt(p.running_var[c] + p.eps) +
                 p.beta.at(0, c, 0, 0);
      }
  return out;
}

std::vector<Real> square_avg_pool_spatial(const std::vector<Real>& x, Shape4 xs, int k) {
  const int OH = xs.h - k + 1, OW = xs.w - k + 1;
  std::vector<Real> out;
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int y = 0; y < OH; ++y)
        for (int xo = 0; xo < OW; ++xo) {
          Real acc = 0.0;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              const Real v =
                  x[((static_cast<std::size_t>(n) * xs.c + c) * xs.h + y + dy) * xs.w + xo + dx];
              acc += v * v;
            }
          out.push_back(acc / (k * k));
        }
  return out;
}

std::vector<Real> square_avg_pool_channel(const std::vector<Real>& x, Shape4 xs, int k) {
  const int OC = xs.c - k + 1;
  std::vector<Real> out;
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < OC; ++c)
      for (int i = 0; i < xs.h * xs.w; ++i) {
        Real acc = 0.0;
        for (int d = 0; d < k; ++d) {
          const Real v = x[(static_cast<std::size_t>(n) * xs.c + c + d) * xs.h * xs.w + i];
          acc += v * v;
        }
        out.push_back(acc / k);
      }
  return out;
}

namespace {

std::vector<Real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Batch mean of per-sample Euclidean distances between two flat maps.
Real batch_distance(const std::vector<Real>& a, const std::vector<Real>& b, int n) {
  const std::size_t per = a.size() / n;
  Real total = 0.0;
  for (int i = 0; i < n; ++i) {
    Real sq = 0.0;
    for (std::size_t j = 0; j < per; ++j) {
      const Real d = a[i * per + j] - b[i * per + j];
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / n;
}

Real pooled(const std::vector<Tensor>& tt, const std::vector<Tensor>& ts,
            const DistillConfig& cfg, bool spatial) {
  Real sum = 0.0;
  int layers = 0;
  for (std::size_t l = 0; l < tt.size(); ++l) {
    if (!cfg.layer_mask.empty() && !cfg.layer_mask[l]) continue;
    ++layers;
    const Shape4 s = tt[l].shape();
    Real layer = 0.0;
    int fit = 0;
    for (int k : spatial ? cfg.pool.spatial_kernels : cfg.pool.channel_kernels) {
      if (spatial ? (k > s.h || k > s.w) : k > s.c) continue;
      const auto a = spatial ? square_avg_pool_spatial(values(tt[l]), s, k)
                             : square_avg_pool_channel(values(tt[l]), s, k);
      const auto b = spatial ? square_avg_pool_spatial(values(ts[l]), s, k)
                             : square_avg_pool_channel(values(ts[l]), s, k);
      layer += batch_distance(a, b, s.n);
      ++fit;
    }
    if (fit) sum += layer / fit;
  }
  return layers ? sum / layers : 0.0;
}

}  // namespace

Real skd(const std::vector<Tensor>& taps_t, const std::vector<Tensor>& taps_s,
         const DistillConfig& cfg) {
  return pooled(taps_t, taps_s, cfg, true);
}

Real ckd(const std::vector<Tensor>& taps_t, const std::vector<Tensor>& taps_s,
         const DistillConfig& cfg) {
  return pooled(taps_t, taps_s, cfg, false);
}

FilterResult filter(const std::vector<Scene>& raw, const TaskSchedule& sched, int t) {
  FilterResult r;
  std::set<int> current(sched.steps[t].begin(), sched.steps[t].end());
  std::set<int> future;
  for (int s = t + 1; s < sched.num_steps(); ++s)
    future.insert(sched.steps[s].begin(), sched.steps[s].end());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (sched.mode == ScheduleMode::kDomainIncremental) {
      if (!current.count(raw[i].domain_id)) continue;
      r.kept.push_back(i);
      r.masks.push_back(raw[i].mask);
      continue;
    }
    std::set<int> present(raw[i].mask.begin(), raw[i].mask.end());
    bool has_current = false, has_future = false;
    for (int c : present) {
      has_current = has_current || current.count(c) > 0;
      has_future = has_future || future.count(c) > 0;
    }
    if (!has_current) continue;
    if (sched.labeling == Labeling::kDisjoint && has_future) continue;
    std::vector<std::uint8_t> m = raw[i].mask;
    for (auto& v : m)
      if (v != kIgnoreLabel && !current.count(v)) v = 0;
    r.kept.push_back(i);
    r.masks.push_back(std::move(m));
  }
  return r;
}

std::vector<Scene> hand_built_corpus() {
  const std::vector<std::vector<int>> label_sets = {
      {},     {1},       {2},       {3},           {4},          {1, 3},
      {1, 4}, {3, 4},    {2, 3, 4}, {1, kIgnoreLabel}, {3, kIgnoreLabel}, {1, 2, 3, 4}};
  std::vector<Scene> out;
  for (const auto& ls : label_sets) {
    Scene s;
    s.height = 2;
    s.width = 3;
    s.image.assign(3 * 6, 128);
    s.mask.assign(6, 0);
    for (std::size_t i = 0; i < ls.size(); ++i) s.mask[i + 1] = static_cast<std::uint8_t>(ls[i]);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace oracle

// ---------------------------------------------------------------------------

Real gradient_relative_error(const ScalarFn& f, std::vector<Tensor> inputs, Real h) {
  for (auto& t : inputs) t.zero_grad();
  Tensor out = f(inputs);
  backward(out);
  std::vector<std::vector<Real>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad()) analytic.emplace_back(t.grad().begin(), t.grad().end());
    else analytic.emplace_back(t.numel(), 0.0);
  }
  Real diff = 0.0, na = 0.0, nn = 0.0;
  NoGradGuard guard;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Real orig = data[i];
      data[i] = orig + h;
      const Real up = f(inputs).item();
      data[i] = orig - h;
      const Real down = f(inputs).item();
      data[i] = orig;
      const Real num = (up - down) / (2 * h);
      const Real a = analytic[k][i];
      diff += (a - num) * (a - num);
      na += a * a;
      nn += num * num;
    }
  }
  const Real denom = std::sqrt(na) + std::sqrt(nn);
  if (denom < 1e-12) return 0.0;
  return std::sqrt(diff) / denom;
}

namespace {

Tensor random_tensor(Shape4 s, Rng& rng, Real scale_ = 1.0, Real offset = 0.0,
                     bool requires_grad = true) {
  std::vector<Real> v(s.numel());
  for (auto& x : v) x = offset + scale_ * rng.normal();
  return Tensor::from_data(s, std::move(v), requires_grad);
}

Tensor random_positive(Shape4 s, Rng& rng, Real lo, Real hi, bool requires_grad = true) {
  std::vector<Real> v(s.numel());
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(s, std::move(v), requires_grad);
}

// Random non-identity norm statistics and affine parameters.
void randomize_branch(RCBranch& b, Rng& rng) {
  const int c = b.norm.channels();
  b.norm.gamma = random_positive({1, c, 1, 1}, rng, 0.5, 1.5, b.trainable);
  b.norm.beta = random_tensor({1, c, 1, 1}, rng, 0.5, 0.0, b.trainable);
  b.conv.bias = random_tensor({1, c, 1, 1}, rng, 0.3, 0.0, b.trainable);
  for (int i = 0; i < c; ++i) {
    b.norm.running_mean[i] = 0.5 * rng.normal();
    b.norm.running_var[i] = rng.uniform(0.3, 2.0);
  }
}

RCBlock random_block(Rng& rng) {
  const int in = rng.range(1, 4), out = rng.range(1, 5);
  const int k = rng.range(0, 1) ? 3 : 1;
  const int stride = rng.range(1, 2);
  const int pad = k == 3 ? rng.range(0, 1) : 0;
  RCBlock blk = RCBlock::create(in, out, k, stride, pad, rng, true, BranchInit::kIndependent);
  randomize_branch(blk.branch_a, rng);
  randomize_branch(blk.branch_b, rng);
  return blk;
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  Real m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

std::string sci(Real v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

}  // namespace

CheckResult check_merge_equivalence(int cases, std::uint64_t seed, const Faults& f) {
  Rng rng(seed);
  NoGradGuard guard;
  Real worst = 0.0;
  for (int i = 0; i < cases; ++i) {
    RCBlock blk = random_block(rng);
    const Tensor x = random_tensor({2, blk.in_channels(), 6, 5}, rng, 1.0, 0.0, false);
    MergedConv m = merge_branches(blk, {0.5, 0.5});
    if (f.corrupt_merged_weight) m.conv.weight.mutable_data()[0] += 1e-3;
    worst = std::max(worst, max_abs_diff(merged_forward(m, x), blk.forward_eval(x)));
  }
  return {"merge_equivalence", worst < 1e-6,
          std::to_string(cases) + " blocks, max |diff| " + sci(worst) + " (tol 1e-6)"};
}

CheckResult check_conv_bn_fusion(int cases, std::uint64_t seed) {
  Rng rng(seed);
  NoGradGuard guard;
  Real worst = 0.0;
  for (int i = 0; i < cases; ++i) {
    RCBlock blk = random_block(rng);
    const RCBranch& b = blk.branch_b;
    const Tensor x = random_tensor({2, blk.in_channels(), 5, 6}, rng, 1.0, 0.0, false);
    const Conv2dParams fused = fuse_conv_bn(b.conv, b.norm);
    worst = std::max(worst, max_abs_diff(conv2d(x, fused), batch_norm_eval(conv2d(x, b.conv), b.norm)));
  }
  return {"conv_bn_fusion", worst < 1e-8,
          std::to_string(cases) + " cases, max |diff| " + sci(worst) + " (tol 1e-8)"};
}

CheckResult check_step_transition(int cases, std::uint64_t seed, const Faults& f) {
  Rng rng(seed);
  NoGradGuard guard;
  TransitionOptions opts;
  if (f.disable_half_merge) opts.merge_weights = {1.0, 1.0};
  Real worst = 0.0;
  bool copied = true;
  for (int i = 0; i < cases; ++i) {
    RCBlock blk = random_block(rng);
    const Tensor x = random_tensor({2, blk.in_channels(), 6, 6}, rng, 1.0, 0.0, false);
    const Tensor before = blk.forward_eval(x);
    RCBlock next = step_transition(blk, opts);
    copied = copied && next.branch_b.conv.weight.data().size() == blk.branch_b.conv.weight.data().size() &&
             std::equal(next.branch_b.conv.weight.data().begin(), next.branch_b.conv.weight.data().end(),
                        blk.branch_b.conv.weight.data().begin());
    // Remove the trainable branch: the block must then give half the old output.
    RCBranch& b = next.branch_b;
    const int oc = b.norm.channels();
    b.conv.weight = Tensor::zeros(b.conv.weight.shape());
    b.conv.bias = Tensor::zeros({1, oc, 1, 1});
    b.norm.gamma = Tensor::zeros({1, oc, 1, 1});
    b.norm.beta = Tensor::zeros({1, oc, 1, 1});
    worst = std::max(worst, max_abs_diff(next.forward_eval(x), scale(before, 0.5)));
  }
  const bool ok = worst < 1e-6 && copied;
  return {"step_transition", ok,
          std::to_string(cases) + " blocks, max |diff| vs 0.5x previous " + sci(worst) +
              (copied ? "" : ", trainable branch not copied")};
}

CheckResult check_drop_path_expectation(int cases, std::uint64_t seed) {
  Rng rng(seed);
  NoGradGuard guard;
  Real worst = 0.0;
  for (int i = 0; i < cases; ++i) {
    RCBlock blk = random_block(rng);
    const Tensor x = random_tensor({2, blk.in_channels(), 5, 5}, rng, 1.0, 0.0, false);
    const int oc = blk.out_channels();
    Tensor acc;
    for (Real eta : {0.0, 0.5, 1.0}) {
      Tensor y = blk.forward_train(x, DropPathMask::constant(oc, eta), false);
      acc = acc.defined() ? add(acc, y) : y;
    }
    worst = std::max(worst, max_abs_diff(scale(acc, 1.0 / 3.0), blk.forward_eval(x)));
  }
  return {"drop_path_expectation", worst < 1e-9,
          std::to_string(cases) + " blocks, max |diff| " + sci(worst) + " (tol 1e-9)"};
}

namespace {

struct GradCase {
  std::string name;
  std::function<std::pair<ScalarFn, std::vector<Tensor>>(Rng&)> make;
};

// sum(op(...) * R) with a fixed random R turns any op into a scalar.
ScalarFn project(std::function<Tensor(const std::vector<Tensor>&)> op, Tensor r) {
  return [op, r](const std::vector<Tensor>& in) { return sum(mul(op(in), r)); };
}

std::pair<ScalarFn, std::vector<Tensor>> projected(
    Rng& rng, std::function<Tensor(const std::vector<Tensor>&)> op, std::vector<Tensor> inputs) {
  Tensor probe;
  {
    NoGradGuard g;
    probe = op(inputs);
  }
  Tensor r = random_tensor(probe.shape(), rng, 1.0, 0.0, false);
  return {project(op, r), inputs};
}

LabelMap random_labels(int n, int h, int w, const std::vector<int>& allowed, Rng& rng) {
  LabelMap lm;
  lm.n = n;
  lm.h = h;
  lm.w = w;
  lm.labels.resize(static_cast<std::size_t>(n) * h * w);
  for (auto& v : lm.labels) v = allowed[rng.below(allowed.size())];
  return lm;
}

std::vector<GradCase> gradient_cases() {
  using V = std::vector<Tensor>;
  std::vector<GradCase> cases;
  cases.push_back({"conv2d", [](Rng& rng) {
    const int stride = rng.range(1, 2), pad = rng.range(0, 1);
    V in{random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng),
         random_tensor({1, 3, 1, 1}, rng)};
    return projected(rng, [stride, pad](const V& v) {
      Conv2dParams p{v[1], v[2], stride, pad};
      return conv2d(v[0], p);
    }, in);
  }});
  cases.push_back({"batch_norm_train", [](Rng& rng) {
    V in{random_tensor({3, 2, 3, 3}, rng), random_positive({1, 2, 1, 1}, rng, 0.5, 1.5),
         random_tensor({1, 2, 1, 1}, rng)};
    return projected(rng, [](const V& v) {
      BatchNormParams p = BatchNormParams::identity(2);
      p.gamma = v[1];
      p.beta = v[2];
      return batch_norm(v[0], p, true);
    }, in);
  }});
  cases.push_back({"batch_norm_eval", [](Rng& rng) {
    V in{random_tensor({2, 3, 3, 2}, rng), random_tensor({1, 3, 1, 1}, rng),
         random_tensor({1, 3, 1, 1}, rng)};
    std::vector<Real> mean(3), var(3);
    for (int c = 0; c < 3; ++c) {
      mean[c] = rng.normal();
      var[c] = rng.uniform(0.5, 2.0);
    }
    return projected(rng, [mean, var](const V& v) {
      BatchNormParams p = BatchNormParams::identity(3);
      p.gamma = v[1];
      p.beta = v[2];
      p.running_mean = mean;
      p.running_var = var;
      return batch_norm_eval(v[0], p);
    }, in);
  }});
  cases.push_back({"relu", [](Rng& rng) {
    return projected(rng, [](const V& v) { return relu(v[0]); }, V{random_tensor({2, 3, 3, 3}, rng)});
  }});
  cases.push_back({"avg_pool2d", [](Rng& rng) {
    const int k = rng.range(1, 3), s = rng.range(1, 2);
    return projected(rng, [k, s](const V& v) { return avg_pool2d(v[0], k, k, s, s); },
                     V{random_tensor({2, 2, 6, 6}, rng)});
  }});
  cases.push_back({"max_pool2d", [](Rng& rng) {
    const int k = rng.range(1, 3), s = rng.range(1, 2);
    return projected(rng, [k, s](const V& v) { return max_pool2d(v[0], k, k, s, s); },
                     V{random_tensor({2, 2, 6, 6}, rng)});
  }});
  cases.push_back({"avg_pool_channels", [](Rng& rng) {
    const int k = rng.range(1, 3), s = rng.range(1, 2);
    return projected(rng, [k, s](const V& v) { return avg_pool_channels(v[0], k, s); },
                     V{random_tensor({2, 5, 3, 3}, rng)});
  }});
  cases.push_back({"softmax_channels", [](Rng& rng) {
    return projected(rng, [](const V& v) { return softmax_channels(v[0]); },
                     V{random_tensor({2, 4, 3, 3}, rng)});
  }});
  cases.push_back({"upsample_bilinear", [](Rng& rng) {
    const int oh = rng.range(2, 8), ow = rng.range(2, 8);
    return projected(rng, [oh, ow](const V& v) { return upsample_bilinear(v[0], oh, ow); },
                     V{random_tensor({1, 2, 3, 4}, rng)});
  }});
  cases.push_back({"add", [](Rng& rng) {
    return projected(rng, [](const V& v) { return add(v[0], v[1]); },
                     V{random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 2, 3, 3}, rng)});
  }});
  cases.push_back({"sub", [](Rng& rng) {
    return projected(rng, [](const V& v) { return sub(v[0], v[1]); },
                     V{random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 2, 3, 3}, rng)});
  }});
  cases.push_back({"mul", [](Rng& rng) {
    return projected(rng, [](const V& v) { return mul(v[0], v[1]); },
                     V{random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 2, 3, 3}, rng)});
  }});
  cases.push_back({"scale", [](Rng& rng) {
    const Real s = rng.normal();
    return projected(rng, [s](const V& v) { return scale(v[0], s); }, V{random_tensor({2, 2, 3, 3}, rng)});
  }});
  cases.push_back({"square", [](Rng& rng) {
    return projected(rng, [](const V& v) { return square(v[0]); }, V{random_tensor({2, 2, 3, 3}, rng)});
  }});
  cases.push_back({"sqrt", [](Rng& rng) {
    return projected(rng, [](const V& v) { return rcil::sqrt(v[0]); },
                     V{random_positive({2, 2, 3, 3}, rng, 0.2, 3.0)});
  }});
  cases.push_back({"channel_scale", [](Rng& rng) {
    std::vector<Real> f(3);
    for (auto& x : f) x = rng.normal();
    return projected(rng, [f](const V& v) { return channel_scale(v[0], f); },
                     V{random_tensor({2, 3, 2, 2}, rng)});
  }});
  cases.push_back({"sum", [](Rng& rng) {
    V in{random_tensor({2, 2, 3, 3}, rng)};
    return std::pair<ScalarFn, V>{[](const V& v) { return scale(sum(v[0]), 0.7); }, in};
  }});
  cases.push_back({"sum_per_sample", [](Rng& rng) {
    return projected(rng, [](const V& v) { return sum_per_sample(v[0]); },
                     V{random_tensor({3, 2, 2, 2}, rng)});
  }});
  cases.push_back({"mean", [](Rng& rng) {
    V in{random_tensor({2, 2, 3, 3}, rng)};
    return std::pair<ScalarFn, V>{[](const V& v) { return mean(square(v[0])); }, in};
  }});
  cases.push_back({"ce_loss", [](Rng& rng) {
    LabelMap lm = random_labels(2, 3, 3, {0, 1, 2, 3, kIgnoreLabel}, rng);
    V in{random_tensor({2, 4, 3, 3}, rng, 2.0)};
    return std::pair<ScalarFn, V>{[lm](const V& v) { return ce_loss(v[0], lm); }, in};
  }});
  cases.push_back({"unce_loss", [](Rng& rng) {
    ClassPartition part{{1, 2}, {3, 4}};
    LabelMap lm = random_labels(2, 3, 3, {0, 3, 4, kIgnoreLabel}, rng);
    V in{random_tensor({2, 5, 3, 3}, rng, 2.0)};
    return std::pair<ScalarFn, V>{[lm, part](const V& v) { return unce_loss(v[0], lm, part); }, in};
  }});
  cases.push_back({"unkd_loss", [](Rng& rng) {
    ClassPartition part{{1, 2}, {3, 4}};
    const Tensor teacher = random_tensor({2, 3, 3, 3}, rng, 2.0, 0.0, false);
    V in{random_tensor({2, 5, 3, 3}, rng, 2.0)};
    return std::pair<ScalarFn, V>{
        [teacher, part](const V& v) { return unkd_loss(v[0], teacher, part); }, in};
  }});
  cases.push_back({"kd_loss", [](Rng& rng) {
    ClassPartition part{{1, 2}, {3}};
    const Tensor teacher = random_tensor({2, 3, 3, 3}, rng, 2.0, 0.0, false);
    V in{random_tensor({2, 4, 3, 3}, rng, 2.0)};
    return std::pair<ScalarFn, V>{
        [teacher, part](const V& v) { return kd_loss(v[0], teacher, part); }, in};
  }});
  cases.push_back({"pcd_loss", [](Rng& rng) {
    DistillConfig cfg;
    cfg.pool.spatial_kernels = {2, 3, 4};
    cfg.pool.channel_kernels = {2, 3};
    std::vector<Tensor> teacher{random_tensor({2, 4, 5, 5}, rng, 1.0, 0.0, false),
                                random_tensor({2, 3, 3, 3}, rng, 1.0, 0.0, false)};
    V in{random_tensor({2, 4, 5, 5}, rng), random_tensor({2, 3, 3, 3}, rng)};
    return std::pair<ScalarFn, V>{
        [teacher, cfg](const V& v) { return pcd_loss(teacher, v, cfg); }, in};
  }});
  cases.push_back({"rc_block_train", [](Rng& rng) {
    RCBlock blk = RCBlock::create(2, 3, 3, 1, 1, rng, true, BranchInit::kIndependent);
    const DropPathMask mask = DropPathMask::sample(3, rng);
    V in{random_tensor({2, 2, 4, 4}, rng), blk.branch_a.conv.weight, blk.branch_b.conv.weight,
         blk.branch_a.norm.gamma, blk.branch_b.norm.beta};
    return projected(rng, [blk, mask](const V& v) mutable {
      blk.branch_a.conv.weight = v[1];
      blk.branch_b.conv.weight = v[2];
      blk.branch_a.norm.gamma = v[3];
      blk.branch_b.norm.beta = v[4];
      return blk.forward_train(v[0], mask, true);
    }, in);
  }});
  return cases;
}

}  // namespace

std::vector<CheckResult> check_gradients(int instances, std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  for (const auto& gc : gradient_cases()) {
    Real worst = 0.0;
    for (int i = 0; i < instances; ++i) {
      auto [fn, inputs] = gc.make(rng);
      worst = std::max(worst, gradient_relative_error(fn, inputs));
    }
    out.push_back({"grad_" + gc.name, worst < 1e-3,
                   std::to_string(instances) + " instances, max rel err " + sci(worst) +
                       " (tol 1e-3)"});
  }
  return out;
}

CheckResult check_distill_oracles(int cases, std::uint64_t seed) {
  Rng rng(seed);
  NoGradGuard guard;
  Real worst = 0.0, worst_zero = 0.0;
  for (int i = 0; i < cases; ++i) {
    DistillConfig cfg;
    cfg.pool.spatial_kernels = {2, 3, 5, 9};
    cfg.pool.channel_kernels = {1, 3};
    std::vector<Tensor> tt, ts;
    const int layers = rng.range(1, 3);
    for (int l = 0; l < layers; ++l) {
      const Shape4 s{rng.range(1, 3), rng.range(2, 5), rng.range(2, 8), rng.range(2, 8)};
      tt.push_back(random_tensor(s, rng, 1.0, 0.0, false));
      ts.push_back(random_tensor(s, rng, 1.0, 0.0, false));
    }
    if (rng.range(0, 1)) {
      cfg.layer_mask.assign(layers, true);
      cfg.layer_mask[rng.below(layers)] = false;
    }
    worst = std::max(worst, std::abs(skd_loss(tt, ts, cfg).item() - oracle::skd(tt, ts, cfg)));
    worst = std::max(worst, std::abs(ckd_loss(tt, ts, cfg).item() - oracle::ckd(tt, ts, cfg)));
    worst_zero = std::max({worst_zero, std::abs(skd_loss(tt, tt, cfg).item()),
                           std::abs(ckd_loss(tt, tt, cfg).item())});
  }
  const bool ok = worst < 1e-8 && worst_zero == 0.0;
  return {"distill_oracles", ok,
          std::to_string(cases) + " cases, max |skd/ckd - brute force| " + sci(worst) +
              ", identical taps " + sci(worst_zero)};
}

CheckResult check_distill_monotone(std::uint64_t seed) {
  Rng rng(seed);
  NoGradGuard guard;
  DistillConfig cfg;
  std::vector<Tensor> tt{random_tensor({2, 8, 16, 16}, rng, 1.0, 0.0, false),
                         random_tensor({2, 16, 8, 8}, rng, 1.0, 0.0, false)};
  std::vector<Tensor> noise{random_tensor({2, 8, 16, 16}, rng, 1.0, 0.0, false),
                            random_tensor({2, 16, 8, 8}, rng, 1.0, 0.0, false)};
  std::vector<Real> skd, ckd;
  for (Real sigma : {0.1, 0.2, 0.4}) {
    std::vector<Tensor> ts;
    for (std::size_t l = 0; l < tt.size(); ++l) ts.push_back(add(tt[l], scale(noise[l], sigma)));
    skd.push_back(skd_loss(tt, ts, cfg).item());
    ckd.push_back(ckd_loss(tt, ts, cfg).item());
  }
  const bool ok = skd[0] < skd[1] && skd[1] < skd[2] && ckd[0] < ckd[1] && ckd[1] < ckd[2];
  return {"distill_monotone_noise", ok,
          "skd " + sci(skd[0]) + " < " + sci(skd[1]) + " < " + sci(skd[2]) + ", ckd " +
              sci(ckd[0]) + " < " + sci(ckd[1]) + " < " + sci(ckd[2])};
}

CheckResult check_protocol_set_logic() {
  const auto corpus = oracle::hand_built_corpus();
  int compared = 0, mismatches = 0;
  for (Labeling lab : {Labeling::kDisjoint, Labeling::kOverlapped}) {
    const TaskSchedule sched = build_schedule("2-1", 4, lab);
    for (int t = 0; t < sched.num_steps(); ++t) {
      const StepDataset ds = filter_and_relabel(corpus, sched, t);
      const auto want = oracle::filter(corpus, sched, t);
      ++compared;
      bool same = ds.provenance == want.kept && ds.scenes.size() == want.masks.size();
      for (std::size_t i = 0; same && i < ds.scenes.size(); ++i)
        same = ds.scenes[i].mask == want.masks[i];
      if (!same) ++mismatches;
    }
  }
  return {"protocol_set_logic", mismatches == 0,
          std::to_string(corpus.size()) + "-scene corpus, " + std::to_string(compared) +
              " (labeling, step) pairs, " + std::to_string(mismatches) + " mismatches"};
}

CheckResult check_checkpoint_roundtrip(std::uint64_t seed) {
  Rng rng(seed);
  ArchSpec arch;
  arch.stages = {{1, 4, true}, {1, 8, true}};
  arch.decoder_channels = 4;
  SegNetwork net = SegNetwork::create(arch, 3, rng);
  StepModel sm = make_step_model(net, 2);
  const auto path = std::filesystem::temp_directory_path() /
                    ("rcil_verify_" + std::to_string(seed) + ".ckpt");
  Checkpoint ck;
  ck.config_hash = 0xabcdef;
  ck.state.rng_state = rng.serialize();
  ck.networks.emplace("student", sm.student);
  ck.networks.emplace("teacher", sm.teacher);
  save_checkpoint(path, ck);
  bool ok = true;
  std::string detail;
  try {
    const Checkpoint back = load_checkpoint(path, 0xabcdef);
    ok = back.networks.at("student").parameter_hash() == sm.student.parameter_hash() &&
         back.networks.at("teacher").parameter_hash() == sm.teacher.parameter_hash() &&
         back.networks.at("student").frozen_hash() == sm.student.frozen_hash() &&
         back.state.rng_state == ck.state.rng_state;
    detail = ok ? "bit-exact" : "hash differs after reload";
    bool refused = false;
    try {
      load_checkpoint(path, 0x1234);
    } catch (const Error&) {
      refused = true;
    }
    if (!refused) {
      ok = false;
      detail += ", hash mismatch not refused";
    } else {
      detail += ", mismatch refused";
    }
  } catch (const std::exception& e) {
    ok = false;
    detail = e.what();
  }
  std::filesystem::remove(path);
  return {"checkpoint_roundtrip", ok, detail};
}

std::vector<CheckResult> run_verify_suite(const Faults& f, std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(check_merge_equivalence(100, seed, f));
  out.push_back(check_conv_bn_fusion(50, seed + 1));
  out.push_back(check_step_transition(50, seed + 2, f));
  out.push_back(check_drop_path_expectation(50, seed + 3));
  for (auto& r : check_gradients(20, seed + 4)) out.push_back(std::move(r));
  out.push_back(check_distill_oracles(30, seed + 5));
  out.push_back(check_distill_monotone(seed + 6));
  out.push_back(check_protocol_set_logic());
  out.push_back(check_checkpoint_roundtrip(seed + 7));
  return out;
}

}  // namespace rcil
