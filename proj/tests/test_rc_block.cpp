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
#include "rcil/rc_block.hpp"
#include "test_util.hpp"

using namespace rcil;
using rcil::test::max_abs_diff;
using rcil::test::random_tensor;

namespace {

void randomize_norm(BatchNormParams& n, Rng& rng) {
  for (int c = 0; c < n.channels(); ++c) {
    n.gamma.mutable_data()[c] = rng.uniform(0.5, 1.5);
    n.beta.mutable_data()[c] = rng.normal() * 0.3;
    n.running_mean[c] = rng.normal() * 0.3;
    n.running_var[c] = rng.uniform(0.5, 2.0);
  }
}

RCBlock random_block(Rng& rng, int in = 3, int out = 4) {
  RCBlock b = RCBlock::create(in, out, 3, 1, 1, rng, true, BranchInit::kIndependent);
  randomize_norm(b.branch_a.norm, rng);
  randomize_norm(b.branch_b.norm, rng);
  return b;
}

Tensor two_path_oracle(const RCBlock& b, const Tensor& x) {
  const Tensor a = batch_norm_eval(conv2d(x, b.branch_a.conv), b.branch_a.norm);
  const Tensor c = batch_norm_eval(conv2d(x, b.branch_b.conv), b.branch_b.norm);
  return scale(add(a, c), 0.5);
}

void zero_branch(RCBranch& br) {
  for (auto* t : {&br.conv.weight, &br.conv.bias, &br.norm.gamma, &br.norm.beta})
    if (t->defined())
      for (auto& v : t->mutable_data()) v = 0.0;
}

}  // namespace

TEST_SUITE("rc_block") {

TEST_CASE("drop-path extremes select one branch") {
  Rng rng(1);
  RCBlock b = random_block(rng);
  const Tensor x = random_tensor({2, 3, 6, 6}, rng);
  const Tensor a = b.branch_a.forward_eval(x);
  const Tensor c = b.branch_b.forward_eval(x);
  CHECK(max_abs_diff(b.forward_train(x, DropPathMask::constant(4, 1.0), false), a) < 1e-15);
  CHECK(max_abs_diff(b.forward_train(x, DropPathMask::constant(4, 0.0), false), c) < 1e-15);
  CHECK(max_abs_diff(b.forward_train(x, DropPathMask::constant(4, 0.5), false), b.forward_eval(x)) <
        1e-15);
}

TEST_CASE("drop-path masks draw from {0, 0.5, 1}") {
  Rng rng(4);
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < 200; ++i)
    for (Real e : DropPathMask::sample(8, rng).eta) {
      REQUIRE((e == 0.0 || e == 0.5 || e == 1.0));
      ++counts[static_cast<int>(e * 2)];
    }
  for (int c : counts) CHECK(c > 400);
}

TEST_CASE("eval output is the averaged two-path oracle") {
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    RCBlock b = random_block(rng);
    const Tensor x = random_tensor({1, 3, 5, 5}, rng);
    CHECK(max_abs_diff(b.forward_eval(x), two_path_oracle(b, x)) < 1e-12);
  }
}

TEST_CASE("identical branches collapse to one") {
  Rng rng(3);
  RCBlock b = random_block(rng);
  b.branch_a = b.branch_b.clone();
  const Tensor x = random_tensor({1, 3, 5, 5}, rng);
  CHECK(max_abs_diff(b.forward_eval(x), b.branch_b.forward_eval(x)) < 1e-12);
}

TEST_CASE("a vanishing branch halves the output") {
  Rng rng(4);
  RCBlock b = random_block(rng);
  zero_branch(b.branch_b);
  const Tensor x = random_tensor({1, 3, 5, 5}, rng);
  CHECK(max_abs_diff(b.forward_eval(x), scale(b.branch_a.forward_eval(x), 0.5)) < 1e-12);
}

TEST_CASE("conv-norm fusion") {
  Rng rng(5);
  Conv2dParams conv;
  conv.weight = random_tensor({4, 3, 3, 3}, rng);
  conv.bias = random_tensor({1, 4, 1, 1}, rng);
  conv.padding = 1;

  SUBCASE("identity norm leaves the conv unchanged") {
    const auto f = fuse_conv_bn(conv, BatchNormParams::identity(4, 0.0));
    CHECK(max_abs_diff(f.weight, conv.weight) < 1e-15);
    CHECK(max_abs_diff(f.bias, conv.bias) < 1e-15);
  }
  SUBCASE("gamma 2 doubles weights and bias") {
    auto n = BatchNormParams::identity(4, 0.0);
    for (auto& g : n.gamma.mutable_data()) g = 2.0;
    const auto f = fuse_conv_bn(conv, n);
    CHECK(max_abs_diff(f.weight, scale(conv.weight, 2.0)) < 1e-15);
    CHECK(max_abs_diff(f.bias, scale(conv.bias, 2.0)) < 1e-15);
  }
  SUBCASE("random norms match the two-stage path") {
    for (int i = 0; i < 20; ++i) {
      auto n = BatchNormParams::identity(4);
      randomize_norm(n, rng);
      const Tensor x = random_tensor({2, 3, 6, 6}, rng);
      CHECK(max_abs_diff(conv2d(x, fuse_conv_bn(conv, n)), batch_norm_eval(conv2d(x, conv), n)) <
            1e-8);
    }
  }
}

TEST_CASE("merge with unit weights and identity norms adds the kernels") {
  Rng rng(6);
  RCBlock b = RCBlock::create(2, 3, 3, 1, 1, rng, true, BranchInit::kIndependent);
  b.branch_a.norm = BatchNormParams::identity(3, 0.0);
  b.branch_b.norm = BatchNormParams::identity(3, 0.0);
  for (auto* bias : {&b.branch_a.conv.bias, &b.branch_b.conv.bias})
    if (!bias->defined()) *bias = Tensor::zeros({1, 3, 1, 1});
  for (auto& v : b.branch_a.conv.bias.mutable_data()) v = rng.normal();
  for (auto& v : b.branch_b.conv.bias.mutable_data()) v = rng.normal();
  const MergedConv m = merge_branches(b, {1.0, 1.0});
  CHECK(max_abs_diff(m.conv.weight, add(b.branch_a.conv.weight, b.branch_b.conv.weight)) < 1e-15);
  CHECK(max_abs_diff(m.conv.bias, add(b.branch_a.conv.bias, b.branch_b.conv.bias)) < 1e-15);
}

TEST_CASE("merged conv equals two-branch inference") {
  Rng rng(7);
  Real worst = 0.0;
  for (int i = 0; i < 25; ++i) {
    RCBlock b = random_block(rng, 3, 5);
    const MergedConv m = merge_branches(b, {0.5, 0.5});
    const Tensor x = random_tensor({2, 3, 7, 7}, rng);
    worst = std::max(worst, max_abs_diff(merged_forward(m, x), b.forward_eval(x)));
  }
  CHECK(worst < 1e-9);

  RCBlock same = random_block(rng);
  same.branch_a = same.branch_b.clone();
  const MergedConv m = merge_branches(same, {0.5, 0.5});
  const auto f = fuse_conv_bn(same.branch_b.conv, same.branch_b.norm);
  CHECK(max_abs_diff(m.conv.weight, f.weight) < 1e-14);
}

TEST_CASE("step transition") {
  Rng rng(8);
  RCBlock b = random_block(rng);
  const Tensor x = random_tensor({1, 3, 6, 6}, rng);

  SUBCASE("merged branch carries the previous function, halved") {
    RCBlock next = step_transition(b);
    CHECK(next.branch_a.merged);
    CHECK_FALSE(next.branch_a.trainable);
    zero_branch(next.branch_b);
    CHECK(max_abs_diff(next.forward_eval(x), scale(b.forward_eval(x), 0.5)) < 1e-9);
  }
  SUBCASE("untrained transitions keep branch_b bit-identical") {
    const RCBlock t2 = step_transition(step_transition(b));
    CHECK(max_abs_diff(t2.branch_b.conv.weight, b.branch_b.conv.weight) == 0.0);
    CHECK(t2.branch_b.norm.running_var == b.branch_b.norm.running_var);
  }
  SUBCASE("frozen branch gets no gradient") {
    RCBlock next = step_transition(b);
    const Tensor y = next.forward_train(x, DropPathMask::sample(4, rng));
    backward(sum(square(y)));
    CHECK_FALSE(next.branch_a.conv.weight.has_grad());
    CHECK(next.branch_b.conv.weight.has_grad());
    for (const auto& p : next.trainable_parameters())
      CHECK(p.node_ptr() != next.branch_a.conv.weight.node_ptr());
  }
  SUBCASE("merge off keeps the raw branch") {
    TransitionOptions opts;
    opts.merge = false;
    opts.freeze = false;
    RCBlock next = step_transition(b, opts);
    CHECK_FALSE(next.branch_a.merged);
    CHECK(next.branch_a.trainable);
    CHECK(max_abs_diff(next.forward_eval(x), b.forward_eval(x)) < 1e-15);
  }
}

TEST_CASE("drop-path expectation equals eval output") {
  Rng rng(9);
  RCBlock b = random_block(rng);
  const Tensor x = random_tensor({1, 3, 5, 5}, rng);
  const Tensor y0 = b.forward_train(x, DropPathMask::constant(4, 0.0), false);
  const Tensor y1 = b.forward_train(x, DropPathMask::constant(4, 1.0), false);
  const Tensor yh = b.forward_train(x, DropPathMask::constant(4, 0.5), false);
  const Tensor avg = scale(add(add(y0, y1), yh), 1.0 / 3.0);
  CHECK(max_abs_diff(avg, b.forward_eval(x)) < 1e-9);
}

TEST_CASE("shared init starts both branches equal") {
  Rng rng(10);
  const RCBlock b = RCBlock::create(3, 4, 3, 1, 1, rng);
  CHECK(max_abs_diff(b.branch_a.conv.weight, b.branch_b.conv.weight) == 0.0);
  CHECK(b.branch_a.conv.weight.node_ptr() != b.branch_b.conv.weight.node_ptr());
  const RCBlock single = RCBlock::create(3, 4, 3, 1, 1, rng, false);
  CHECK(single.parameters().size() < b.parameters().size());
}

}  // TEST_SUITE
