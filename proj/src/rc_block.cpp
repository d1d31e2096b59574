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

#include "rcil/rc_block.hpp"

#include <cmath>
#include <string>

namespace rcil {

Tensor RCBranch::forward(const Tensor& x, bool batch_stats) {
  Tensor y = conv2d(x, conv);
  if (batch_stats && trainable && !merged) return batch_norm(y, norm, true);
  return batch_norm_eval(y, norm);
}

Tensor RCBranch::forward_eval(const Tensor& x) const {
  return batch_norm_eval(conv2d(x, conv), norm);
}

void RCBranch::set_trainable(bool flag) {
  trainable = flag;
  for (auto& t : parameters()) {
    Tensor h = t;
    h.set_requires_grad(flag);
  }
}

std::vector<Tensor> RCBranch::parameters() const {
  std::vector<Tensor> out{conv.weight};
  if (conv.bias.defined()) out.push_back(conv.bias);
  out.push_back(norm.gamma);
  out.push_back(norm.beta);
  return out;
}

RCBranch RCBranch::clone() const {
  RCBranch out;
  out.conv = conv.clone();
  out.norm = norm.clone();
  out.trainable = trainable;
  out.merged = merged;
  return out;
}

DropPathMask DropPathMask::sample(int channels, Rng& rng) {
  static constexpr Real kLevels[3] = {0.0, 0.5, 1.0};
  DropPathMask m;
  m.eta.resize(channels);
  for (auto& e : m.eta) e = kLevels[rng.below(3)];
  return m;
}

DropPathMask DropPathMask::constant(int channels, Real value) {
  return DropPathMask{std::vector<Real>(channels, value)};
}

namespace {

RCBranch make_branch(int in_ch, int out_ch, int kernel, int stride, int padding,
                     Rng& rng) {
  RCBranch b;
  const Real stddev = std::sqrt(2.0 / (static_cast<Real>(in_ch) * kernel * kernel));
  std::vector<Real> w(static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel);
  for (auto& v : w) v = stddev * rng.normal();
  b.conv.weight = Tensor::from_data({out_ch, in_ch, kernel, kernel}, std::move(w), true);
  b.conv.bias = Tensor::zeros({1, out_ch, 1, 1}, true);
  b.conv.stride = stride;
  b.conv.padding = padding;
  b.norm = BatchNormParams::identity(out_ch);
  b.norm.gamma.set_requires_grad(true);
  b.norm.beta.set_requires_grad(true);
  return b;
}

}  // namespace

RCBlock RCBlock::create(int in_ch, int out_ch, int kernel, int stride,
                        int padding, Rng& rng, bool two_branch, BranchInit init) {
  RCBlock blk;
  blk.two_branch = two_branch;
  blk.branch_b = make_branch(in_ch, out_ch, kernel, stride, padding, rng);
  if (two_branch) {
    blk.branch_a = init == BranchInit::kShared
                       ? blk.branch_b.clone()
                       : make_branch(in_ch, out_ch, kernel, stride, padding, rng);
  }
  return blk;
}

Tensor RCBlock::forward_train(const Tensor& x, const DropPathMask& mask,
                              bool batch_stats) {
  if (!two_branch) return branch_b.forward(x, batch_stats);
  const int oc = out_channels();
  if (mask.eta.size() != static_cast<std::size_t>(oc))
    throw ShapeError("drop-path mask has " + std::to_string(mask.eta.size()) +
                     " entries, block has " + std::to_string(oc) + " channels");
  std::vector<Real> rest(mask.eta.size());
  for (std::size_t i = 0; i < rest.size(); ++i) rest[i] = 1.0 - mask.eta[i];
  Tensor a = branch_a.forward(x, batch_stats);
  Tensor b = branch_b.forward(x, batch_stats);
  return add(channel_scale(a, mask.eta), channel_scale(b, rest));
}

Tensor RCBlock::forward_eval(const Tensor& x) const {
  if (!two_branch) return branch_b.forward_eval(x);
  Tensor a = branch_a.forward_eval(x);
  Tensor b = branch_b.forward_eval(x);
  return add(scale(a, fusion_weights[0]), scale(b, fusion_weights[1]));
}

std::vector<Tensor> RCBlock::parameters() const {
  std::vector<Tensor> out;
  if (two_branch) out = branch_a.parameters();
  for (auto& t : branch_b.parameters()) out.push_back(t);
  return out;
}

std::vector<Tensor> RCBlock::trainable_parameters() const {
  std::vector<Tensor> out;
  for (auto& t : parameters())
    if (t.requires_grad()) out.push_back(t);
  return out;
}

RCBlock RCBlock::clone() const {
  RCBlock out;
  out.two_branch = two_branch;
  if (two_branch) out.branch_a = branch_a.clone();
  out.branch_b = branch_b.clone();
  out.fusion_weights = fusion_weights;
  out.mode = mode;
  return out;
}

Conv2dParams fuse_conv_bn(const Conv2dParams& conv, const BatchNormParams& norm) {
  const Shape4 ws = conv.weight.shape();
  if (norm.channels() != ws.n)
    throw ShapeError("fuse_conv_bn: norm channels do not match conv outputs");
  const std::size_t per_out = static_cast<std::size_t>(ws.c) * ws.h * ws.w;
  std::vector<Real> w(conv.weight.data().begin(), conv.weight.data().end());
  std::vector<Real> b(ws.n);
  for (int o = 0; o < ws.n; ++o) {
    const Real sigma = std::sqrt(norm.running_var[o] + norm.eps);
    const Real g = norm.gamma.data()[o];
    const Real k = g / sigma;
    for (std::size_t i = 0; i < per_out; ++i) w[o * per_out + i] *= k;
    const Real bias = conv.bias.defined() ? conv.bias.data()[o] : 0.0;
    b[o] = (g * bias - g * norm.running_mean[o]) / sigma + norm.beta.data()[o];
  }
  Conv2dParams out;
  out.weight = Tensor::from_data(ws, std::move(w));
  out.bias = Tensor::from_data({1, ws.n, 1, 1}, std::move(b));
  out.stride = conv.stride;
  out.padding = conv.padding;
  return out;
}

MergedConv merge_branches(const RCBlock& block, std::array<Real, 2> weights) {
  if (!block.two_branch)
    return MergedConv{fuse_conv_bn(block.branch_b.conv, block.branch_b.norm)};
  const Conv2dParams fa = fuse_conv_bn(block.branch_a.conv, block.branch_a.norm);
  const Conv2dParams fb = fuse_conv_bn(block.branch_b.conv, block.branch_b.norm);
  if (fa.weight.shape() != fb.weight.shape() || fa.stride != fb.stride ||
      fa.padding != fb.padding)
    throw ShapeError("merge_branches: branches differ in conv hyper-shape");
  std::vector<Real> w(fa.weight.numel()), b(fa.bias.numel());
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = weights[0] * fa.weight.data()[i] + weights[1] * fb.weight.data()[i];
  for (std::size_t i = 0; i < b.size(); ++i)
    b[i] = weights[0] * fa.bias.data()[i] + weights[1] * fb.bias.data()[i];
  MergedConv m;
  m.conv.weight = Tensor::from_data(fa.weight.shape(), std::move(w));
  m.conv.bias = Tensor::from_data(fa.bias.shape(), std::move(b));
  m.conv.stride = fa.stride;
  m.conv.padding = fa.padding;
  return m;
}

Tensor merged_forward(const MergedConv& merged, const Tensor& x) {
  return conv2d(x, merged.conv);
}

RCBlock step_transition(const RCBlock& block, const TransitionOptions& opts) {
  if (!block.two_branch) return block.clone();
  RCBlock next;
  next.two_branch = true;
  next.mode = BlockMode::kTraining;
  next.fusion_weights = {0.5, 0.5};
  if (opts.merge) {
    MergedConv m = merge_branches(block, opts.merge_weights);
    next.branch_a.conv = m.conv;
    next.branch_a.norm = BatchNormParams::identity(block.out_channels(), 0.0);
    next.branch_a.merged = true;
  } else {
    next.branch_a = block.branch_a.clone();
  }
  next.branch_a.set_trainable(!opts.freeze);
  next.branch_b = block.branch_b.clone();
  next.branch_b.set_trainable(true);
  return next;
}

}  // namespace rcil
