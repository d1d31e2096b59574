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
#include "rcil/ops.hpp"
#include "rcil/optim.hpp"
#include "rcil/verify.hpp"
#include "test_util.hpp"

using namespace rcil;
using rcil::test::max_abs_diff;
using rcil::test::random_tensor;

namespace {

// Direct nested-loop convolution, zero padding.
std::vector<Real> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const auto xs = x.shape(), ws = w.shape();
  const int oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  std::vector<Real> out(static_cast<std::size_t>(xs.n) * ws.n * oh * ow, 0.0);
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          Real acc = b.defined() ? b.at(0, o, 0, 0) : 0.0;
          for (int c = 0; c < xs.c; ++c)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
                if (iy < 0 || ix < 0 || iy >= xs.h || ix >= xs.w) continue;
                acc += x.at(n, c, iy, ix) * w.at(o, c, ky, kx);
              }
          out[((static_cast<std::size_t>(n) * ws.n + o) * oh + y) * ow + xx] = acc;
        }
  return out;
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("all-ones 3x3 convolution gives 9 at the center") {
  Conv2dParams p;
  p.weight = Tensor::full({1, 1, 3, 3}, 1.0);
  p.bias = Tensor::zeros({1, 1, 1, 1});
  p.padding = 1;
  const Tensor y = conv2d(Tensor::full({1, 1, 3, 3}, 1.0), p);
  CHECK(y.at(0, 0, 1, 1) == 9.0);
  CHECK(y.at(0, 0, 0, 0) == 4.0);
}

TEST_CASE("identity kernel reproduces the input") {
  Rng rng(3);
  Conv2dParams p;
  p.weight = Tensor::zeros({2, 2, 3, 3});
  p.weight.at(0, 0, 1, 1) = 1.0;
  p.weight.at(1, 1, 1, 1) = 1.0;
  p.padding = 1;
  const Tensor x = random_tensor({2, 2, 5, 6}, rng);
  CHECK(max_abs_diff(conv2d(x, p), x) == 0.0);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  Rng rng(11);
  for (int stride : {1, 2}) {
    Conv2dParams p;
    p.weight = random_tensor({4, 3, 3, 3}, rng);
    p.bias = random_tensor({1, 4, 1, 1}, rng);
    p.stride = stride;
    p.padding = 1;
    const Tensor x = random_tensor({2, 3, 8, 8}, rng);
    CHECK(max_abs_diff(conv2d(x, p).data(), naive_conv(x, p.weight, p.bias, stride, 1)) < 1e-12);
  }
}

TEST_CASE("batch norm eval examples") {
  auto p = BatchNormParams::identity(1, 0.0);
  const Tensor x = Tensor::from_data({1, 1, 1, 3}, {-1.0, 0.5, 3.0});
  CHECK(max_abs_diff(batch_norm_eval(x, p), x) == 0.0);
  p.gamma.mutable_data()[0] = 2.0;
  p.beta.mutable_data()[0] = 1.0;
  CHECK(batch_norm_eval(x, p).data()[2] == doctest::Approx(7.0));

  Rng rng(5);
  BatchNormParams q = BatchNormParams::identity(3);
  for (int c = 0; c < 3; ++c) {
    q.gamma.mutable_data()[c] = rng.uniform(0.5, 2.0);
    q.beta.mutable_data()[c] = rng.normal();
    q.running_mean[c] = rng.normal();
    q.running_var[c] = rng.uniform(0.2, 3.0);
  }
  const Tensor z = random_tensor({2, 3, 4, 4}, rng);
  const Tensor y = batch_norm_eval(z, q);
  Real err = 0.0;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          const Real want = q.gamma.data()[c] * (z.at(n, c, i, j) - q.running_mean[c]) /
                                std::sqrt(q.running_var[c] + q.eps) +
                            q.beta.data()[c];
          err = std::max(err, std::abs(y.at(n, c, i, j) - want));
        }
  CHECK(err < 1e-12);
}

TEST_CASE("batch norm training updates running statistics") {
  auto p = BatchNormParams::identity(1);
  p.momentum = 0.5;
  const Tensor x = Tensor::from_data({1, 1, 1, 4}, {1.0, 2.0, 3.0, 4.0});
  const Tensor y = batch_norm(x, p, true);
  CHECK(p.running_mean[0] == doctest::Approx(0.5 * 2.5));
  // unbiased variance of {1,2,3,4} is 5/3
  CHECK(p.running_var[0] == doctest::Approx(0.5 + 0.5 * 5.0 / 3.0));
  Real m = 0.0;
  for (Real v : y.data()) m += v;
  CHECK(std::abs(m) < 1e-12);
}

TEST_CASE("pooling and softmax examples") {
  const Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(avg_pool2d(x, 2, 2, 1, 1).item() == doctest::Approx(2.5));
  CHECK(max_pool2d(x, 2, 2, 1, 1).item() == 4.0);

  const Tensor s = softmax_channels(Tensor::full({1, 5, 2, 2}, 0.3));
  for (Real v : s.data()) CHECK(v == doctest::Approx(0.2));

  Rng rng(9);
  const Tensor r = random_tensor({1, 2, 6, 7}, rng);
  const Tensor p = avg_pool2d(r, 3, 3, 1, 1);
  REQUIRE(p.shape() == Shape4{1, 2, 4, 5});
  Real err = 0.0;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 5; ++j) {
        Real acc = 0.0;
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) acc += r.at(0, c, i + a, j + b);
        err = std::max(err, std::abs(p.at(0, c, i, j) - acc / 9.0));
      }
  CHECK(err < 1e-12);
}

TEST_CASE("bilinear upsampling keeps constants and is exact at scale 1") {
  const Tensor c = upsample_bilinear(Tensor::full({1, 2, 3, 4}, 1.5), 9, 8);
  for (Real v : c.data()) CHECK(v == doctest::Approx(1.5));
  Rng rng(1);
  const Tensor x = random_tensor({1, 1, 4, 4}, rng);
  CHECK(max_abs_diff(upsample_bilinear(x, 4, 4), x) < 1e-15);
}

TEST_CASE("autograd on sum and square") {
  Tensor x = Tensor::full({2, 3, 1, 1}, 3.0, true);
  backward(sum(x));
  for (Real g : x.grad()) CHECK(g == 1.0);
  x.zero_grad();
  backward(sum(square(x)));
  for (Real g : x.grad()) CHECK(g == 6.0);
}

TEST_CASE("no-grad guard records no graph") {
  Tensor x = Tensor::full({1, 1, 2, 2}, 1.0, true);
  {
    NoGradGuard g;
    CHECK_FALSE(grad_enabled());
    const Tensor y = scale(x, 2.0);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_enabled());
}

TEST_CASE("composed graph matches finite differences") {
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    Conv2dParams p;
    p.weight = random_tensor({3, 2, 3, 3}, rng, 0.5, true);
    p.bias = random_tensor({1, 3, 1, 1}, rng, 0.5, true);
    p.padding = 1;
    const Tensor x = random_tensor({2, 2, 5, 5}, rng, 1.0, true);
    auto f = [&](const std::vector<Tensor>& in) {
      Conv2dParams q = p;
      q.weight = in[1];
      q.bias = in[2];
      const Tensor y = softmax_channels(upsample_bilinear(avg_pool2d(conv2d(in[0], q), 2, 2, 1, 1), 6, 6));
      return mean(square(sub(y, scale(y, 0.3))));
    };
    CHECK(gradient_relative_error(f, {x, p.weight, p.bias}, 1e-4) < 1e-3);
  }
}

TEST_CASE("sgd examples") {
  SUBCASE("vanilla step") {
    Tensor w = Tensor::zeros({1, 1, 1, 1}, true);
    backward(sum(w));
    OptimizerState st;
    st.base_lr = 0.1;
    st.momentum = 0.0;
    st.poly_power = 0.0;
    st.total_iterations = 10;
    Sgd opt(st);
    std::vector<Tensor> params{w};
    opt.step(params);
    CHECK(w.item() == doctest::Approx(-0.1));
  }
  SUBCASE("schedule endpoint leaves parameters unchanged") {
    Tensor w = Tensor::full({1, 1, 1, 1}, 2.0, true);
    backward(sum(w));
    OptimizerState st;
    st.iteration = 5;
    st.total_iterations = 5;
    CHECK(st.effective_lr() == 0.0);
    Sgd opt(st);
    std::vector<Tensor> params{w};
    opt.step(params);
    CHECK(w.item() == 2.0);
  }
  SUBCASE("momentum recurrence") {
    Tensor w = Tensor::zeros({1, 1, 1, 1}, true);
    OptimizerState st;
    st.base_lr = 0.1;
    st.momentum = 0.9;
    st.poly_power = 0.0;
    st.total_iterations = 100;
    Sgd opt(st);
    std::vector<Tensor> params{w};
    Real v = 0.0, expect = 0.0;
    for (int i = 0; i < 3; ++i) {
      zero_grad(params);
      backward(scale(sum(w), 2.0));
      opt.step(params);
      v = 0.9 * v + 2.0;
      expect -= 0.1 * v;
    }
    CHECK(w.item() == doctest::Approx(expect).epsilon(1e-14));
  }
  SUBCASE("poly schedule") {
    OptimizerState st;
    st.base_lr = 0.02;
    st.poly_power = 0.9;
    st.iteration = 25;
    st.total_iterations = 100;
    CHECK(st.effective_lr() == doctest::Approx(0.02 * std::pow(0.75, 0.9)));
  }
}

TEST_CASE("shape errors are reported") {
  CHECK_THROWS_AS(add(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 2, 3})), ShapeError);
  CHECK_THROWS_AS(backward(Tensor::zeros({1, 1, 1, 2}, true)), ShapeError);
}

}  // TEST_SUITE
