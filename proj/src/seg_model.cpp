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

#include "rcil/seg_model.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace rcil {

namespace {

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
}

void fnv_reals(std::uint64_t& h, std::span<const Real> v) {
  fnv_bytes(h, v.data(), v.size() * sizeof(Real));
}

void hash_branch(std::uint64_t& h, const RCBranch& b) {
  for (const auto& t : b.parameters()) fnv_reals(h, t.data());
  fnv_reals(h, b.norm.running_mean);
  fnv_reals(h, b.norm.running_var);
  fnv_bytes(h, &b.norm.eps, sizeof(Real));
}

}  // namespace

SegNetwork SegNetwork::create(const ArchSpec& arch, int head_channels, Rng& rng) {
  if (arch.stages.empty()) throw Error("architecture needs at least one stage");
  if (head_channels < 1) throw Error("head needs at least one channel");
  SegNetwork net;
  net.arch_ = arch;
  int in_ch = arch.in_channels;
  for (const auto& st : arch.stages) {
    if (st.n_blocks < 1 || st.channels < 1) throw Error("invalid stage spec");
    std::vector<RCBlock> blocks;
    for (int i = 0; i < st.n_blocks; ++i) {
      const int stride = (i == 0 && st.downsample) ? 2 : 1;
      blocks.push_back(RCBlock::create(in_ch, st.channels, 3, stride, 1, rng, arch.rc));
      in_ch = st.channels;
    }
    net.stages.push_back(std::move(blocks));
  }
  net.decoder = RCBlock::create(in_ch, arch.decoder_channels, 3, 1, 1, rng, arch.rc);
  const int d = arch.decoder_channels;
  const Real stddev = std::sqrt(1.0 / d);
  std::vector<Real> w(static_cast<std::size_t>(head_channels) * d);
  for (auto& v : w) v = stddev * rng.normal();
  net.head.weight = Tensor::from_data({head_channels, d, 1, 1}, std::move(w), true);
  net.head.bias = Tensor::zeros({1, head_channels, 1, 1}, true);
  return net;
}

ForwardResult SegNetwork::run(const Tensor& x, Rng* rng, bool training, bool drop_path) {
  if (x.shape().c != arch_.in_channels)
    throw ShapeError("network expects " + std::to_string(arch_.in_channels) +
                     " input channels, got " + std::to_string(x.shape().c));
  ForwardResult res;
  auto apply = [&](RCBlock& blk, const Tensor& h) {
    if (!training) return blk.forward_eval(h);
    const int oc = blk.out_channels();
    DropPathMask mask = (drop_path && blk.two_branch)
                            ? DropPathMask::sample(oc, *rng)
                            : DropPathMask::constant(oc, 0.5);
    return blk.forward_train(h, mask, true);
  };
  Tensor h = x;
  for (auto& stage : stages) {
    for (std::size_t i = 0; i < stage.size(); ++i) {
      Tensor pre = apply(stage[i], h);
      if (i + 1 == stage.size()) res.taps.push_back(pre);
      h = relu(pre);
    }
  }
  Tensor pre = apply(decoder, h);
  res.taps.push_back(pre);
  h = relu(pre);
  Tensor logits = conv2d(h, head);
  res.logits = upsample_bilinear(logits, x.shape().h, x.shape().w);
  return res;
}

ForwardResult SegNetwork::forward_train(const Tensor& x, Rng& rng, bool drop_path) {
  return run(x, &rng, true, drop_path);
}

ForwardResult SegNetwork::forward_eval(const Tensor& x) const {
  // Eval mode never mutates parameters or statistics.
  return const_cast<SegNetwork*>(this)->run(x, nullptr, false, false);
}

void SegNetwork::extend_head(int new_classes) {
  if (new_classes < 1) throw Error("extend_head: new_classes must be >= 1");
  const Shape4 ws = head.weight.shape();
  const int old_k = ws.n, d = ws.c, k = old_k + new_classes;
  std::vector<Real> w(static_cast<std::size_t>(k) * d);
  std::vector<Real> b(k);
  auto ow = head.weight.data();
  auto ob = head.bias.data();
  std::copy(ow.begin(), ow.end(), w.begin());
  std::copy(ob.begin(), ob.end(), b.begin());
  for (int r = old_k; r < k; ++r) {
    std::copy(ow.begin(), ow.begin() + d, w.begin() + static_cast<std::size_t>(r) * d);
    b[r] = ob[0] - arch_.head_init_shift;
  }
  const bool rg = head.weight.requires_grad();
  head.weight = Tensor::from_data({k, d, 1, 1}, std::move(w), rg);
  head.bias = Tensor::from_data({1, k, 1, 1}, std::move(b), rg);
}

SegNetwork SegNetwork::merged() const {
  SegNetwork out = clone();
  for (RCBlock* blk : out.blocks()) {
    MergedConv m = merge_branches(*blk, blk->fusion_weights);
    RCBlock single;
    single.two_branch = false;
    single.mode = BlockMode::kInference;
    single.branch_b.conv = m.conv;
    single.branch_b.norm = BatchNormParams::identity(m.conv.out_channels(), 0.0);
    single.branch_b.merged = true;
    single.branch_b.set_trainable(false);
    *blk = std::move(single);
  }
  out.head = head.clone();
  out.freeze_all();
  return out;
}

std::vector<RCBlock*> SegNetwork::blocks() {
  std::vector<RCBlock*> out;
  for (auto& st : stages)
    for (auto& b : st) out.push_back(&b);
  out.push_back(&decoder);
  return out;
}

std::vector<const RCBlock*> SegNetwork::blocks() const {
  std::vector<const RCBlock*> out;
  for (const auto& st : stages)
    for (const auto& b : st) out.push_back(&b);
  out.push_back(&decoder);
  return out;
}

std::vector<Tensor> SegNetwork::parameters() const {
  std::vector<Tensor> out;
  for (const RCBlock* b : blocks())
    for (auto& t : b->parameters()) out.push_back(t);
  out.push_back(head.weight);
  out.push_back(head.bias);
  return out;
}

std::vector<Tensor> SegNetwork::trainable_parameters() const {
  std::vector<Tensor> out;
  for (auto& t : parameters())
    if (t.requires_grad()) out.push_back(t);
  return out;
}

std::size_t SegNetwork::parameter_count(bool include_head) const {
  std::size_t n = 0;
  for (const RCBlock* b : blocks())
    for (auto& t : b->parameters()) n += t.numel();
  if (include_head) n += head.weight.numel() + head.bias.numel();
  return n;
}

std::uint64_t SegNetwork::parameter_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const RCBlock* b : blocks()) {
    if (b->two_branch) hash_branch(h, b->branch_a);
    hash_branch(h, b->branch_b);
  }
  fnv_reals(h, head.weight.data());
  fnv_reals(h, head.bias.data());
  return h;
}

std::uint64_t SegNetwork::frozen_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const RCBlock* b : blocks()) {
    if (b->two_branch && !b->branch_a.trainable) hash_branch(h, b->branch_a);
    if (!b->branch_b.trainable) hash_branch(h, b->branch_b);
  }
  return h;
}

void SegNetwork::freeze_all() {
  for (RCBlock* b : blocks()) {
    if (b->two_branch) b->branch_a.set_trainable(false);
    b->branch_b.set_trainable(false);
  }
  head.weight.set_requires_grad(false);
  head.bias.set_requires_grad(false);
}

SegNetwork SegNetwork::clone() const {
  SegNetwork out;
  out.arch_ = arch_;
  for (const auto& st : stages) {
    std::vector<RCBlock> blocks;
    for (const auto& b : st) blocks.push_back(b.clone());
    out.stages.push_back(std::move(blocks));
  }
  out.decoder = decoder.clone();
  out.head = head.clone();
  return out;
}

SegNetwork extend_head(const SegNetwork& net, int new_classes) {
  SegNetwork out = net.clone();
  out.extend_head(new_classes);
  return out;
}

StepModel make_step_model(const SegNetwork& prev, int new_classes,
                          const TransitionOptions& opts) {
  StepModel m;
  m.teacher = prev.clone();
  m.teacher.freeze_all();
  m.student = prev.clone();
  for (RCBlock* b : m.student.blocks()) *b = step_transition(*b, opts);
  for (RCBlock* b : m.student.blocks())
    if (!b->two_branch) b->branch_b.set_trainable(true);
  m.student.head.weight.set_requires_grad(true);
  m.student.head.bias.set_requires_grad(true);
  if (new_classes > 0) m.student.extend_head(new_classes);
  return m;
}

}  // namespace rcil
