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
#include "rcil/seg_model.hpp"
#include "rcil/trainer.hpp"
#include "test_util.hpp"

using namespace rcil;
using rcil::test::max_abs_diff;
using rcil::test::random_tensor;

namespace {

// Eval-mode network with non-trivial running statistics.
SegNetwork warmed_network(Rng& rng, int head = 4) {
  SegNetwork net = SegNetwork::create(ArchSpec{}, head, rng);
  for (int i = 0; i < 3; ++i) (void)net.forward_train(random_tensor({2, 3, 32, 32}, rng), rng, true);
  return net;
}

Tensor channel_slice(const Tensor& t, int channels) {
  const auto s = t.shape();
  std::vector<Real> out;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.push_back(t.at(n, c, y, x));
  return Tensor::from_data({s.n, channels, s.h, s.w}, out);
}

}  // namespace

TEST_SUITE("seg_model") {

TEST_CASE("default network yields one tap per stage plus the decoder") {
  Rng rng(1);
  const SegNetwork net = SegNetwork::create(ArchSpec{}, 7, rng);
  const auto out = net.forward_eval(random_tensor({1, 3, 32, 32}, rng));
  CHECK(out.taps.size() == 4);
  CHECK(out.logits.shape() == Shape4{1, 7, 32, 32});
  const Tensor p = softmax_channels(out.logits);
  for (int y = 0; y < 32; y += 7) {
    Real s = 0.0;
    for (int c = 0; c < 7; ++c) s += p.at(0, c, y, y);
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("head grows one class per step in a 15-1 style run") {
  Rng rng(2);
  SegNetwork net = SegNetwork::create(ArchSpec{}, 16, rng);
  std::vector<int> sizes{net.head_channels()};
  for (int t = 0; t < 5; ++t) {
    net = make_step_model(net, 1).student;
    sizes.push_back(net.head_channels());
  }
  CHECK(sizes == std::vector<int>{16, 17, 18, 19, 20, 21});
  CHECK(extend_head(SegNetwork::create(ArchSpec{}, 16, rng), 5).head_channels() == 21);
}

TEST_CASE("extending the head keeps old logits") {
  Rng rng(3);
  const SegNetwork net = warmed_network(rng);
  const Tensor x = random_tensor({1, 3, 32, 32}, rng);
  const Tensor before = net.forward_eval(x).logits;
  const Tensor after = extend_head(net, 2).forward_eval(x).logits;
  CHECK(after.shape().c == 6);
  CHECK(max_abs_diff(channel_slice(after, 4), before) == 0.0);
}

TEST_CASE("merged network matches the two-branch network") {
  Rng rng(4);
  const SegNetwork net = warmed_network(rng);
  const Tensor x = random_tensor({2, 3, 32, 32}, rng);
  const auto a = net.forward_eval(x);
  const auto b = net.merged().forward_eval(x);
  CHECK(max_abs_diff(a.logits, b.logits) < 1e-8);
  for (std::size_t i = 0; i < a.taps.size(); ++i) CHECK(max_abs_diff(a.taps[i], b.taps[i]) < 1e-8);
}

TEST_CASE("step model: teacher copies, student freezes branch_a") {
  Rng rng(5);
  const SegNetwork prev = warmed_network(rng);
  const Tensor x = random_tensor({1, 3, 32, 32}, rng);
  StepModel m = make_step_model(prev, 1);
  CHECK(max_abs_diff(m.teacher.forward_eval(x).logits, prev.forward_eval(x).logits) == 0.0);
  CHECK(m.teacher.parameter_hash() == prev.parameter_hash());

  const auto s = m.student.forward_eval(x).logits;
  CHECK(max_abs_diff(channel_slice(s, 4), prev.forward_eval(x).logits) < 1e-8);

  for (const auto& p : m.student.trainable_parameters())
    for (auto* blk : m.student.blocks())
      for (const auto& f : blk->branch_a.parameters()) CHECK(p.node_ptr() != f.node_ptr());
  CHECK(m.student.trainable_parameters().size() < m.student.parameters().size());
}

TEST_CASE("inference cost is independent of the step") {
  Rng rng(6);
  SegNetwork net = warmed_network(rng);
  const std::size_t macs0 = inference_macs(net, 32, 32);
  const std::size_t params0 = net.merged().parameter_count(false);
  for (int t = 0; t < 4; ++t) net = make_step_model(net, 1).student;
  CHECK(inference_macs(net, 32, 32) == macs0);
  CHECK(net.merged().parameter_count(false) == params0);
  CHECK(net.parameter_count(false) > params0);
}

TEST_CASE("plain architecture has single-branch blocks") {
  Rng rng(7);
  ArchSpec arch;
  arch.rc = false;
  const SegNetwork plain = SegNetwork::create(arch, 3, rng);
  for (const auto* b : plain.blocks()) CHECK_FALSE(b->two_branch);
  CHECK(plain.frozen_hash() == SegNetwork::create(arch, 3, rng).frozen_hash());
}

}  // TEST_SUITE
