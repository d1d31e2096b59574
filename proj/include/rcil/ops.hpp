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

#include <span>
#include <vector>

#include "rcil/tensor.hpp"

namespace rcil {

struct Conv2dParams {
  Tensor weight;  // (out_ch, in_ch, kh, kw)
  Tensor bias;    // (1, out_ch, 1, 1); may be undefined for a bias-free conv
  int stride = 1;
  int padding = 0;

  int out_channels() const { return weight.shape().n; }
  int in_channels() const { return weight.shape().c; }
  int kernel_h() const { return weight.shape().h; }
  int kernel_w() const { return weight.shape().w; }

  Conv2dParams clone() const;
};

struct BatchNormParams {
  Tensor gamma;  // (1, ch, 1, 1)
  Tensor beta;   // (1, ch, 1, 1)
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  Real eps = 1e-5;
  Real momentum = 0.1;

  int channels() const { return gamma.shape().c; }
  /// gamma = 1, beta = 0, mean = 0, var = 1.
  static BatchNormParams identity(int channels, Real eps = 1e-5);
  BatchNormParams clone() const;
};

// Layers.

Tensor conv2d(const Tensor& x, const Conv2dParams& p);

/// In training mode normalizes with batch statistics (biased variance) and
/// updates the running statistics with `momentum`, using the unbiased
/// variance estimate for running_var.
Tensor batch_norm(const Tensor& x, BatchNormParams& p, bool training);
/// Eval-mode only; never touches running statistics.
Tensor batch_norm_eval(const Tensor& x, const BatchNormParams& p);

Tensor relu(const Tensor& x);
Tensor avg_pool2d(const Tensor& x, int kh, int kw, int sh, int sw);
Tensor max_pool2d(const Tensor& x, int kh, int kw, int sh, int sw);
/// Average pooling along the channel axis at every spatial position.
Tensor avg_pool_channels(const Tensor& x, int kernel, int stride);
Tensor softmax_channels(const Tensor& x);
/// Bilinear resize with half-pixel centers (align_corners = false).
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);

// Elementwise and reductions.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real s);
Tensor square(const Tensor& x);
/// Elementwise sqrt; the derivative at 0 is taken as 0.
Tensor sqrt(const Tensor& x);
/// Multiplies channel c by factors[c] (constant, not differentiated).
Tensor channel_scale(const Tensor& x, std::span<const Real> factors);
Tensor sum(const Tensor& x);
/// Sum over (c, h, w) per batch element; result has shape (n, 1, 1, 1).
Tensor sum_per_sample(const Tensor& x);
Tensor mean(const Tensor& x);

/// Sums a list of single-element tensors, skipping undefined entries.
Tensor add_scalars(std::span<const Tensor> terms);

}  // namespace rcil
