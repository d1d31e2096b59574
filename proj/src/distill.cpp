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

#include "rcil/distill.hpp"

#include <functional>

namespace rcil {

std::string to_string(DistillVariant v) {
  switch (v) {
    case DistillVariant::kAvgCube: return "avg";
    case DistillVariant::kStrip: return "strip";
    case DistillVariant::kMax: return "max";
    case DistillVariant::kGap: return "gap";
    case DistillVariant::kNone: return "none";
  }
  return "?";
}

DistillVariant parse_distill_variant(const std::string& name) {
  if (name == "avg" || name == "avg_cube") return DistillVariant::kAvgCube;
  if (name == "strip") return DistillVariant::kStrip;
  if (name == "max") return DistillVariant::kMax;
  if (name == "gap") return DistillVariant::kGap;
  if (name == "none") return DistillVariant::kNone;
  throw Error("unknown distillation variant '" + name +
              "' (expected avg, strip, max, gap, none)");
}

std::optional<Tensor> pooled_square(const Tensor& x, int kernel, int stride,
                                    PoolAxis axis) {
  const Shape4 s = x.shape();
  if (axis == PoolAxis::kSpatial) {
    if (kernel > s.h || kernel > s.w) return std::nullopt;
    return avg_pool2d(square(x), kernel, kernel, stride, stride);
  }
  if (kernel > s.c) return std::nullopt;
  return avg_pool_channels(square(x), kernel, stride);
}

Tensor per_sample_l2(const Tensor& teacher, const Tensor& student) {
  return mean(sqrt(sum_per_sample(square(sub(teacher, student)))));
}

namespace {

using LayerTerm = std::function<Tensor(const Tensor& t, const Tensor& s)>;

Tensor zero_scalar() { return Tensor::scalar(0.0); }

Tensor average_over_layers(const std::vector<Tensor>& taps_t,
                           const std::vector<Tensor>& taps_s,
                           const std::vector<bool>& mask, const LayerTerm& term) {
  if (taps_t.size() != taps_s.size())
    throw ShapeError("distillation: teacher has " + std::to_string(taps_t.size()) +
                     " taps, student has " + std::to_string(taps_s.size()));
  if (!mask.empty() && mask.size() != taps_t.size())
    throw ShapeError("distillation: layer_mask length " + std::to_string(mask.size()) +
                     " does not match " + std::to_string(taps_t.size()) + " taps");
  std::vector<Tensor> terms;
  int enabled = 0;
  for (std::size_t l = 0; l < taps_t.size(); ++l) {
    if (taps_t[l].shape() != taps_s[l].shape())
      throw ShapeError("distillation: tap " + std::to_string(l) + " shape mismatch " +
                       taps_t[l].shape().str() + " vs " + taps_s[l].shape().str());
    if (!mask.empty() && !mask[l]) continue;
    ++enabled;
    Tensor t = term(taps_t[l].detach(), taps_s[l]);
    if (t.defined()) terms.push_back(t);
  }
  if (enabled == 0 || terms.empty()) return zero_scalar();
  return scale(add_scalars(terms), 1.0 / enabled);
}

// Mean over the kernels that fit; undefined when none does.
Tensor multi_kernel_term(const Tensor& t, const Tensor& s,
                         const std::vector<int>& kernels, int stride, PoolAxis axis,
                         bool cascade) {
  std::vector<Tensor> terms;
  if (!cascade) {
    for (int k : kernels) {
      auto pt = pooled_square(t, k, stride, axis);
      if (!pt) continue;
      auto ps = pooled_square(s, k, stride, axis);
      terms.push_back(per_sample_l2(*pt, *ps));
    }
  } else {
    Tensor pt = square(t), ps = square(s);
    for (int k : kernels) {
      const Shape4 sh = pt.shape();
      if (axis == PoolAxis::kSpatial) {
        if (k > sh.h || k > sh.w) continue;
        pt = avg_pool2d(pt, k, k, stride, stride);
        ps = avg_pool2d(ps, k, k, stride, stride);
      } else {
        if (k > sh.c) continue;
        pt = avg_pool_channels(pt, k, stride);
        ps = avg_pool_channels(ps, k, stride);
      }
      terms.push_back(per_sample_l2(pt, ps));
    }
  }
  if (terms.empty()) return Tensor();
  return scale(add_scalars(terms), 1.0 / static_cast<Real>(terms.size()));
}

}  // namespace

Tensor skd_loss(const std::vector<Tensor>& taps_t, const std::vector<Tensor>& taps_s,
                const DistillConfig& cfg) {
  return average_over_layers(taps_t, taps_s, cfg.layer_mask, [&](const Tensor& t, const Tensor& s) {
    return multi_kernel_term(t, s, cfg.pool.spatial_kernels, cfg.pool.spatial_stride,
                             PoolAxis::kSpatial, cfg.cascade);
  });
}

Tensor ckd_loss(const std::vector<Tensor>& taps_t, const std::vector<Tensor>& taps_s,
                const DistillConfig& cfg) {
  return average_over_layers(taps_t, taps_s, cfg.layer_mask, [&](const Tensor& t, const Tensor& s) {
    return multi_kernel_term(t, s, cfg.pool.channel_kernels, cfg.pool.channel_stride,
                             PoolAxis::kChannel, cfg.cascade);
  });
}

Tensor strip_pool_loss(const std::vector<Tensor>& taps_t,
                       const std::vector<Tensor>& taps_s, const DistillConfig& cfg) {
  return average_over_layers(taps_t, taps_s, cfg.layer_mask, [](const Tensor& t, const Tensor& s) {
    const Shape4 sh = t.shape();
    Tensor qt = square(t), qs = square(s);
    Tensor rows = per_sample_l2(avg_pool2d(qt, sh.h, 1, 1, 1), avg_pool2d(qs, sh.h, 1, 1, 1));
    Tensor cols = per_sample_l2(avg_pool2d(qt, 1, sh.w, 1, 1), avg_pool2d(qs, 1, sh.w, 1, 1));
    return add(rows, cols);
  });
}

Tensor max_pool_loss(const std::vector<Tensor>& taps_t,
                     const std::vector<Tensor>& taps_s, const DistillConfig& cfg) {
  return average_over_layers(taps_t, taps_s, cfg.layer_mask, [&](const Tensor& t, const Tensor& s) {
    std::vector<Tensor> terms;
    const int stride = cfg.pool.spatial_stride;
    for (int k : cfg.pool.spatial_kernels) {
      if (k > t.shape().h || k > t.shape().w) continue;
      terms.push_back(per_sample_l2(max_pool2d(square(t), k, k, stride, stride),
                                    max_pool2d(square(s), k, k, stride, stride)));
    }
    if (terms.empty()) return Tensor();
    return scale(add_scalars(terms), 1.0 / static_cast<Real>(terms.size()));
  });
}

Tensor gap_loss(const std::vector<Tensor>& taps_t, const std::vector<Tensor>& taps_s,
                const DistillConfig& cfg) {
  return average_over_layers(taps_t, taps_s, cfg.layer_mask, [](const Tensor& t, const Tensor& s) {
    const Shape4 sh = t.shape();
    return per_sample_l2(avg_pool2d(square(t), sh.h, sh.w, 1, 1),
                         avg_pool2d(square(s), sh.h, sh.w, 1, 1));
  });
}

Tensor unpooled_loss(const std::vector<Tensor>& taps_t,
                     const std::vector<Tensor>& taps_s, const DistillConfig& cfg) {
  return average_over_layers(taps_t, taps_s, cfg.layer_mask, [](const Tensor& t, const Tensor& s) {
    return per_sample_l2(square(t), square(s));
  });
}

Tensor pcd_loss(const std::vector<Tensor>& taps_t, const std::vector<Tensor>& taps_s,
                const DistillConfig& cfg) {
  switch (cfg.variant) {
    case DistillVariant::kAvgCube:
      return add(skd_loss(taps_t, taps_s, cfg), ckd_loss(taps_t, taps_s, cfg));
    case DistillVariant::kStrip: return strip_pool_loss(taps_t, taps_s, cfg);
    case DistillVariant::kMax: return max_pool_loss(taps_t, taps_s, cfg);
    case DistillVariant::kGap: return gap_loss(taps_t, taps_s, cfg);
    case DistillVariant::kNone: return unpooled_loss(taps_t, taps_s, cfg);
  }
  throw Error("unreachable distillation variant");
}

}  // namespace rcil
