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
#include "rcil/verify.hpp"
#include "test_util.hpp"

using namespace rcil;
using rcil::test::random_tensor;

namespace {

// Explicit windows, stride 1: mean of squares over each k x k window.
std::vector<Real> spatial_windows(const Tensor& x, int k) {
  const auto s = x.shape();
  std::vector<Real> out;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i + k <= s.h; ++i)
        for (int j = 0; j + k <= s.w; ++j) {
          Real acc = 0.0;
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) acc += x.at(n, c, i + a, j + b) * x.at(n, c, i + a, j + b);
          out.push_back(acc / (k * k));
        }
  return out;
}

std::vector<Real> channel_windows(const Tensor& x, int k) {
  const auto s = x.shape();
  std::vector<Real> out;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c + k <= s.c; ++c)
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) {
          Real acc = 0.0;
          for (int d = 0; d < k; ++d) acc += x.at(n, c + d, i, j) * x.at(n, c + d, i, j);
          out.push_back(acc / k);
        }
  return out;
}

// Batch mean of per-sample Euclidean distance between two flat pooled maps.
Real batch_l2(const std::vector<Real>& a, const std::vector<Real>& b, int batch) {
  const std::size_t per = a.size() / batch;
  Real total = 0.0;
  for (int n = 0; n < batch; ++n) {
    Real acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const Real d = a[n * per + i] - b[n * per + i];
      acc += d * d;
    }
    total += std::sqrt(acc);
  }
  return total / batch;
}

struct Taps {
  std::vector<Tensor> t, s;
};

Taps random_taps(Rng& rng, Real noise) {
  Taps p;
  for (Shape4 sh : {Shape4{2, 4, 12, 12}, Shape4{2, 6, 8, 8}, Shape4{2, 8, 5, 5}}) {
    p.t.push_back(random_tensor(sh, rng));
    Tensor s = p.t.back().clone();
    Rng nr(99);
    for (auto& v : s.mutable_data()) v += noise * nr.normal();
    p.s.push_back(s);
  }
  return p;
}

}  // namespace

TEST_SUITE("distill") {

TEST_CASE("pooled square examples") {
  const auto zero = pooled_square(Tensor::zeros({1, 2, 4, 4}), 2, 1, PoolAxis::kSpatial);
  for (Real v : zero->data()) CHECK(v == 0.0);
  const Tensor pair = Tensor::from_data({1, 2, 1, 1}, {-2.0, 2.0});
  CHECK(pooled_square(pair, 2, 1, PoolAxis::kChannel)->item() == doctest::Approx(4.0));
  CHECK_FALSE(pooled_square(pair, 3, 1, PoolAxis::kChannel).has_value());

  Rng rng(1);
  const Tensor x = random_tensor({1, 4, 8, 8}, rng);
  CHECK(test::max_abs_diff(pooled_square(x, 4, 1, PoolAxis::kSpatial)->data(), spatial_windows(x, 4)) <
        1e-12);
  CHECK(test::max_abs_diff(pooled_square(x, 3, 1, PoolAxis::kChannel)->data(), channel_windows(x, 3)) <
        1e-12);
}

TEST_CASE("skd and ckd match explicit-window oracles") {
  Rng rng(2);
  DistillConfig cfg;
  cfg.pool.spatial_kernels = {2, 4, 6, 10};
  cfg.pool.channel_kernels = {3, 5};
  for (int trial = 0; trial < 5; ++trial) {
    const Taps p = random_taps(rng, 0.3);
    Real skd = 0.0, ckd = 0.0;
    for (std::size_t l = 0; l < p.t.size(); ++l) {
      const auto sh = p.t[l].shape();
      Real sk = 0.0, ck = 0.0;
      int ns = 0, nc = 0;
      for (int k : cfg.pool.spatial_kernels)
        if (k <= sh.h && k <= sh.w)
          sk += batch_l2(spatial_windows(p.t[l], k), spatial_windows(p.s[l], k), sh.n), ++ns;
      for (int k : cfg.pool.channel_kernels)
        if (k <= sh.c) ck += batch_l2(channel_windows(p.t[l], k), channel_windows(p.s[l], k), sh.n), ++nc;
      if (ns) skd += sk / ns;
      if (nc) ckd += ck / nc;
    }
    skd /= static_cast<Real>(p.t.size());
    ckd /= static_cast<Real>(p.t.size());
    CHECK(skd_loss(p.t, p.s, cfg).item() == doctest::Approx(skd).epsilon(1e-12));
    CHECK(ckd_loss(p.t, p.s, cfg).item() == doctest::Approx(ckd).epsilon(1e-12));
    CHECK(pcd_loss(p.t, p.s, cfg).item() ==
          skd_loss(p.t, p.s, cfg).item() + ckd_loss(p.t, p.s, cfg).item());
  }
}

TEST_CASE("identical taps give exactly zero for every variant") {
  Rng rng(3);
  const Taps p = random_taps(rng, 0.0);
  for (auto v : {DistillVariant::kAvgCube, DistillVariant::kStrip, DistillVariant::kMax,
                 DistillVariant::kGap, DistillVariant::kNone}) {
    DistillConfig cfg;
    cfg.variant = v;
    CHECK(pcd_loss(p.t, p.s, cfg).item() == 0.0);
  }
}

TEST_CASE("constant maps give closed forms") {
  const Real ct = 1.5, cs = 0.5;
  const std::vector<Tensor> t{Tensor::full({1, 4, 6, 6}, ct)};
  const std::vector<Tensor> s{Tensor::full({1, 4, 6, 6}, cs)};
  const Real d = std::abs(ct * ct - cs * cs);
  DistillConfig cfg;
  cfg.pool.spatial_kernels = {6};
  cfg.pool.channel_kernels = {3};
  // full-map window: one pooled value per channel
  CHECK(skd_loss(t, s, cfg).item() == doctest::Approx(std::sqrt(4.0) * d));
  // channel windows of 3 over 4 channels leave 2 x 6 x 6 values
  CHECK(ckd_loss(t, s, cfg).item() == doctest::Approx(std::sqrt(2.0 * 36.0) * d));
  CHECK(gap_loss(t, s, cfg).item() == doctest::Approx(2.0 * d));
  // strip: 6 row means and 6 column means per channel
  CHECK(strip_pool_loss(t, s, cfg).item() == doctest::Approx(2.0 * std::sqrt(24.0) * d));
  CHECK(unpooled_loss(t, s, cfg).item() == doctest::Approx(std::sqrt(144.0) * d));
}

TEST_CASE("narrow channel dimension is skipped") {
  const std::vector<Tensor> t{Tensor::full({1, 2, 4, 4}, 1.0)};
  const std::vector<Tensor> s{Tensor::full({1, 2, 4, 4}, 2.0)};
  CHECK(ckd_loss(t, s, DistillConfig{}).item() == 0.0);
}

TEST_CASE("layer mask") {
  Rng rng(4);
  const Taps p = random_taps(rng, 0.5);
  DistillConfig cfg;
  cfg.layer_mask = {false, false, false};
  CHECK(pcd_loss(p.t, p.s, cfg).item() == 0.0);
  cfg.layer_mask = {false, false, true};
  const Real last = pcd_loss(p.t, p.s, cfg).item();
  CHECK(last == doctest::Approx(pcd_loss({p.t[2]}, {p.s[2]}, DistillConfig{}).item()));
  cfg.layer_mask = {true, false};
  CHECK_THROWS_AS(pcd_loss(p.t, p.s, cfg), ShapeError);
}

TEST_CASE("loss grows with the perturbation scale") {
  Rng rng(5);
  for (auto v : {DistillVariant::kAvgCube, DistillVariant::kStrip}) {
    DistillConfig cfg;
    cfg.variant = v;
    Real prev = 0.0;
    for (Real a : {0.1, 0.2, 0.4}) {
      Rng same(5);
      const Taps p = random_taps(same, a);
      const Real l = pcd_loss(p.t, p.s, cfg).item();
      CHECK(l > prev);
      prev = l;
    }
  }
}

TEST_CASE("an outlier spreads along strips but stays local under windows") {
  // One hot pixel in the student. Strip pooling touches a whole row and a
  // whole column; 2x2 windows touch at most four pooled cells.
  const int n = 12;
  Tensor t = Tensor::zeros({1, 1, n, n});
  Tensor s = Tensor::zeros({1, 1, n, n});
  s.at(0, 0, 5, 5) = 3.0;
  DistillConfig local;
  local.pool.spatial_kernels = {2};
  const auto pt = pooled_square(t, 2, 1, PoolAxis::kSpatial);
  const auto ps = pooled_square(s, 2, 1, PoolAxis::kSpatial);
  int touched_local = 0;
  for (std::size_t i = 0; i < pt->numel(); ++i) touched_local += pt->data()[i] != ps->data()[i];
  const Tensor rt = avg_pool2d(square(t), n, 1, 1, 1), rs = avg_pool2d(square(s), n, 1, 1, 1);
  int touched_strip = 0;
  for (std::size_t i = 0; i < rt.numel(); ++i) touched_strip += rt.data()[i] != rs.data()[i];
  CHECK(touched_local == 4);
  CHECK(touched_strip == 1);
  // The two losses differ on this input.
  CHECK(strip_pool_loss({t}, {s}).item() != doctest::Approx(skd_loss({t}, {s}, local).item()));
}

TEST_CASE("gradients reach only the student") {
  Rng rng(6);
  Tensor t = random_tensor({1, 4, 6, 6}, rng, 1.0, true);
  Tensor s = random_tensor({1, 4, 6, 6}, rng, 1.0, true);
  DistillConfig cfg;
  cfg.pool.spatial_kernels = {2, 3};
  backward(pcd_loss({t}, {s}, cfg));
  CHECK(s.has_grad());
  CHECK_FALSE(t.has_grad());
  auto f = [&](const std::vector<Tensor>& in) { return pcd_loss({t.detach()}, {in[0]}, cfg); };
  CHECK(gradient_relative_error(f, {s}) < 1e-5);
}

}  // TEST_SUITE
