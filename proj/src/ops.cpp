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

#include "rcil/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace rcil {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
}

// Range of output indices o in [0, out_extent) for which o*stride - pad + k
// lands inside [0, in_extent).
std::pair<int, int> valid_range(int in_extent, int out_extent, int stride,
                                int pad, int k) {
  const int lo_num = pad - k;
  int lo = lo_num <= 0 ? 0 : (lo_num + stride - 1) / stride;
  const int hi_num = in_extent - 1 + pad - k;
  int hi = hi_num < 0 ? -1 : std::min(out_extent - 1, hi_num / stride);
  return {lo, hi};
}

}  // namespace

Conv2dParams Conv2dParams::clone() const {
  Conv2dParams out;
  out.weight = weight.clone();
  if (bias.defined()) out.bias = bias.clone();
  out.stride = stride;
  out.padding = padding;
  return out;
}

BatchNormParams BatchNormParams::identity(int channels, Real eps) {
  BatchNormParams p;
  p.gamma = Tensor::full({1, channels, 1, 1}, 1.0);
  p.beta = Tensor::zeros({1, channels, 1, 1});
  p.running_mean.assign(channels, 0.0);
  p.running_var.assign(channels, 1.0);
  p.eps = eps;
  return p;
}

BatchNormParams BatchNormParams::clone() const {
  BatchNormParams out = *this;
  out.gamma = gamma.clone();
  out.beta = beta.clone();
  return out;
}

// ---------------------------------------------------------------------------
// Convolution: the input window of every output pixel is unfolded into a
// column buffer (rows = c*kh*kw taps, columns = output pixels) and each
// output channel accumulates taps in a fixed order.

namespace {

struct ConvGeom {
  Shape4 xs, ws, os;
  int s, pad;
  std::size_t taps() const { return static_cast<std::size_t>(ws.c) * ws.h * ws.w; }
};

// col[(c*kh + ky)*kw + kx][oy*OW + ox] = x[c][oy*s - pad + ky][ox*s - pad + kx] or 0.
void unfold(const ConvGeom& g, const Real* X, Real* col) {
  const int OH = g.os.h, OW = g.os.w;
  const std::size_t P = g.os.plane();
  for (int c = 0; c < g.xs.c; ++c) {
    const Real* ip = X + static_cast<std::size_t>(c) * g.xs.plane();
    for (int ky = 0; ky < g.ws.h; ++ky)
      for (int kx = 0; kx < g.ws.w; ++kx) {
        Real* row = col + ((static_cast<std::size_t>(c) * g.ws.h + ky) * g.ws.w + kx) * P;
        std::fill(row, row + P, 0.0);
        const auto [oy0, oy1] = valid_range(g.xs.h, OH, g.s, g.pad, ky);
        const auto [ox0, ox1] = valid_range(g.xs.w, OW, g.s, g.pad, kx);
        for (int oy = oy0; oy <= oy1; ++oy) {
          const Real* irow = ip + static_cast<std::size_t>(oy * g.s - g.pad + ky) * g.xs.w;
          Real* orow = row + static_cast<std::size_t>(oy) * OW;
          for (int ox = ox0; ox <= ox1; ++ox) orow[ox] = irow[ox * g.s - g.pad + kx];
        }
      }
  }
}

// Eight interleaved partial sums, combined in a fixed order.
Real dot(const Real* a, const Real* b, std::size_t n) {
  Real acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  Real tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

// Adjoint of unfold: scatters column gradients back onto the input.
void fold_add(const ConvGeom& g, const Real* col, Real* dX) {
  const int OH = g.os.h, OW = g.os.w;
  const std::size_t P = g.os.plane();
  for (int c = 0; c < g.xs.c; ++c) {
    Real* ip = dX + static_cast<std::size_t>(c) * g.xs.plane();
    for (int ky = 0; ky < g.ws.h; ++ky)
      for (int kx = 0; kx < g.ws.w; ++kx) {
        const Real* row = col + ((static_cast<std::size_t>(c) * g.ws.h + ky) * g.ws.w + kx) * P;
        const auto [oy0, oy1] = valid_range(g.xs.h, OH, g.s, g.pad, ky);
        const auto [ox0, ox1] = valid_range(g.xs.w, OW, g.s, g.pad, kx);
        for (int oy = oy0; oy <= oy1; ++oy) {
          Real* irow = ip + static_cast<std::size_t>(oy * g.s - g.pad + ky) * g.xs.w;
          const Real* orow = row + static_cast<std::size_t>(oy) * OW;
          for (int ox = ox0; ox <= ox1; ++ox) irow[ox * g.s - g.pad + kx] += orow[ox];
        }
      }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  const Shape4 xs = x.shape();
  const Shape4 ws = p.weight.shape();
  if (ws.c != xs.c)
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) +
                     " channels, weight expects " + std::to_string(ws.c));
  if (p.stride < 1 || p.padding < 0)
    throw ShapeError("conv2d: invalid stride/padding");
  if (p.bias.defined() && p.bias.numel() != static_cast<std::size_t>(ws.n))
    throw ShapeError("conv2d: bias length does not match out channels");
  const int s = p.stride, pad = p.padding;
  if (xs.h + 2 * pad < ws.h || xs.w + 2 * pad < ws.w)
    throw ShapeError("conv2d: kernel larger than padded input");
  const int OH = (xs.h + 2 * pad - ws.h) / s + 1;
  const int OW = (xs.w + 2 * pad - ws.w) / s + 1;
  const Shape4 os{xs.n, ws.n, OH, OW};
  const ConvGeom g{xs, ws, os, s, pad};

  auto& counter = op_counter();
  counter.conv_calls += 1;
  counter.macs += static_cast<std::uint64_t>(os.numel()) * ws.c * ws.h * ws.w;

  std::vector<Real> out(os.numel(), 0.0);
  const Real* X = x.data().data();
  const Real* Wt = p.weight.data().data();
  const Real* B = p.bias.defined() ? p.bias.data().data() : nullptr;
  const std::size_t P = os.plane(), K = g.taps();
  std::vector<Real> col(K * P);

  for (int n = 0; n < xs.n; ++n) {
    unfold(g, X + static_cast<std::size_t>(n) * xs.c * xs.plane(), col.data());
    for (int o = 0; o < ws.n; ++o) {
      Real* op = out.data() + (static_cast<std::size_t>(n) * ws.n + o) * P;
      if (B) std::fill(op, op + P, B[o]);
      const Real* wrow = Wt + static_cast<std::size_t>(o) * K;
      for (std::size_t k = 0; k < K; ++k) {
        const Real wv = wrow[k];
        const Real* cr = col.data() + k * P;
        for (std::size_t i = 0; i < P; ++i) op[i] += wv * cr[i];
      }
    }
  }

  std::vector<Tensor> inputs{x, p.weight};
  if (p.bias.defined()) inputs.push_back(p.bias);
  return make_result(os, std::move(out), inputs, [g](detail::Node& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    detail::Node* bn = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    const Real* dY = self.grad.data();
    const Shape4 xs = g.xs, ws = g.ws, os = g.os;
    const std::size_t P = os.plane(), K = g.taps();

    if (bn && bn->requires_grad) {
      auto& db = bn->ensure_grad();
      for (int n = 0; n < os.n; ++n)
        for (int o = 0; o < os.c; ++o) {
          const Real* gr = dY + (static_cast<std::size_t>(n) * os.c + o) * P;
          Real acc = 0.0;
          for (std::size_t i = 0; i < P; ++i) acc += gr[i];
          db[o] += acc;
        }
    }
    Real* dX = xn.requires_grad ? xn.ensure_grad().data() : nullptr;
    Real* dW = wn.requires_grad ? wn.ensure_grad().data() : nullptr;
    if (!dX && !dW) return;
    const Real* X = xn.data.data();
    const Real* Wt = wn.data.data();
    std::vector<Real> col(K * P), dcol(dX ? K * P : 0);
    for (int n = 0; n < os.n; ++n) {
      const Real* gn = dY + static_cast<std::size_t>(n) * os.c * P;
      if (dW) {
        unfold(g, X + static_cast<std::size_t>(n) * xs.c * xs.plane(), col.data());
        for (int o = 0; o < ws.n; ++o) {
          const Real* gr = gn + static_cast<std::size_t>(o) * P;
          Real* dwrow = dW + static_cast<std::size_t>(o) * K;
          for (std::size_t k = 0; k < K; ++k) {
            const Real* cr = col.data() + k * P;
            dwrow[k] += dot(gr, cr, P);
          }
        }
      }
      if (dX) {
        std::fill(dcol.begin(), dcol.end(), 0.0);
        for (int o = 0; o < ws.n; ++o) {
          const Real* gr = gn + static_cast<std::size_t>(o) * P;
          const Real* wrow = Wt + static_cast<std::size_t>(o) * K;
          for (std::size_t k = 0; k < K; ++k) {
            const Real wv = wrow[k];
            Real* dr = dcol.data() + k * P;
            for (std::size_t i = 0; i < P; ++i) dr[i] += wv * gr[i];
          }
        }
        fold_add(g, dcol.data(), dX + static_cast<std::size_t>(n) * xs.c * xs.plane());
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization.

Tensor batch_norm_eval(const Tensor& x, const BatchNormParams& p) {
  const Shape4 xs = x.shape();
  if (xs.c != p.channels() || p.running_mean.size() != static_cast<std::size_t>(xs.c) ||
      p.running_var.size() != static_cast<std::size_t>(xs.c))
    throw ShapeError("batch_norm: channel mismatch, input has " +
                     std::to_string(xs.c) + " channels, norm has " +
                     std::to_string(p.channels()));
  const std::size_t plane = xs.plane();
  std::vector<Real> inv_std(xs.c);
  for (int c = 0; c < xs.c; ++c) inv_std[c] = 1.0 / std::sqrt(p.running_var[c] + p.eps);
  std::vector<Real> out(xs.numel());
  const Real* X = x.data().data();
  const Real* G = p.gamma.data().data();
  const Real* Bt = p.beta.data().data();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
      const Real mu = p.running_mean[c];
      for (std::size_t i = 0; i < plane; ++i)
        out[off + i] = G[c] * (X[off + i] - mu) * inv_std[c] + Bt[c];
    }
  std::vector<Real> mean_copy = p.running_mean;
  return make_result(xs, std::move(out), {x, p.gamma, p.beta},
                     [xs, inv_std, mean_copy](detail::Node& self) {
    auto& xn = *self.parents[0];
    auto& gn = *self.parents[1];
    auto& bn = *self.parents[2];
    const std::size_t plane = xs.plane();
    const Real* dY = self.grad.data();
    Real* dX = xn.requires_grad ? xn.ensure_grad().data() : nullptr;
    Real* dG = gn.requires_grad ? gn.ensure_grad().data() : nullptr;
    Real* dB = bn.requires_grad ? bn.ensure_grad().data() : nullptr;
    for (int c = 0; c < xs.c; ++c) {
      Real sg = 0.0, sb = 0.0;
      const Real gamma = gn.data[c];
      for (int n = 0; n < xs.n; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const Real g = dY[off + i];
          if (dX) dX[off + i] += g * gamma * inv_std[c];
          sg += g * (xn.data[off + i] - mean_copy[c]) * inv_std[c];
          sb += g;
        }
      }
      if (dG) dG[c] += sg;
      if (dB) dB[c] += sb;
    }
  });
}

Tensor batch_norm(const Tensor& x, BatchNormParams& p, bool training) {
  if (!training) return batch_norm_eval(x, p);
  const Shape4 xs = x.shape();
  if (xs.c != p.channels())
    throw ShapeError("batch_norm: channel mismatch, input has " +
                     std::to_string(xs.c) + " channels, norm has " +
                     std::to_string(p.channels()));
  const std::size_t plane = xs.plane();
  const Real count = static_cast<Real>(xs.n) * plane;
  const Real* X = x.data().data();
  std::vector<Real> mean(xs.c, 0.0), inv_std(xs.c);
  std::vector<Real> xhat(xs.numel());
  for (int c = 0; c < xs.c; ++c) {
    Real s = 0.0;
    for (int n = 0; n < xs.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) s += X[off + i];
    }
    mean[c] = s / count;
    Real v = 0.0;
    for (int n = 0; n < xs.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const Real d = X[off + i] - mean[c];
        v += d * d;
      }
    }
    const Real var = v / count;
    inv_std[c] = 1.0 / std::sqrt(var + p.eps);
    const Real unbiased = count > 1 ? v / (count - 1) : var;
    p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * mean[c];
    p.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * unbiased;
  }
  std::vector<Real> out(xs.numel());
  const Real* G = p.gamma.data().data();
  const Real* Bt = p.beta.data().data();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[off + i] = (X[off + i] - mean[c]) * inv_std[c];
        out[off + i] = G[c] * xhat[off + i] + Bt[c];
      }
    }
  return make_result(xs, std::move(out), {x, p.gamma, p.beta},
                     [xs, inv_std, xhat = std::move(xhat), count](detail::Node& self) {
    auto& xn = *self.parents[0];
    auto& gn = *self.parents[1];
    auto& bn = *self.parents[2];
    const std::size_t plane = xs.plane();
    const Real* dY = self.grad.data();
    Real* dX = xn.requires_grad ? xn.ensure_grad().data() : nullptr;
    Real* dG = gn.requires_grad ? gn.ensure_grad().data() : nullptr;
    Real* dB = bn.requires_grad ? bn.ensure_grad().data() : nullptr;
    for (int c = 0; c < xs.c; ++c) {
      Real sum_g = 0.0, sum_gx = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += dY[off + i];
          sum_gx += dY[off + i] * xhat[off + i];
        }
      }
      if (dG) dG[c] += sum_gx;
      if (dB) dB[c] += sum_g;
      if (dX) {
        const Real k = gn.data[c] * inv_std[c];
        for (int n = 0; n < xs.n; ++n) {
          const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
          for (std::size_t i = 0; i < plane; ++i)
            dX[off + i] += k * (dY[off + i] - sum_g / count - xhat[off + i] * sum_gx / count);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Activations, pooling, resampling.

Tensor relu(const Tensor& x) {
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (Real& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& xn = *self.parents[0];
    auto& dX = xn.ensure_grad();
    for (std::size_t i = 0; i < dX.size(); ++i)
      if (xn.data[i] > 0.0) dX[i] += self.grad[i];
  });
}

Tensor avg_pool2d(const Tensor& x, int kh, int kw, int sh, int sw) {
  const Shape4 xs = x.shape();
  if (kh < 1 || kw < 1 || sh < 1 || sw < 1)
    throw ShapeError("avg_pool2d: kernel and stride must be positive");
  if (kh > xs.h || kw > xs.w)
    throw ShapeError("avg_pool2d: kernel larger than input " + xs.str());
  const int OH = (xs.h - kh) / sh + 1, OW = (xs.w - kw) / sw + 1;
  const Shape4 os{xs.n, xs.c, OH, OW};
  const Real inv = 1.0 / (static_cast<Real>(kh) * kw);
  std::vector<Real> out(os.numel(), 0.0);
  const Real* X = x.data().data();
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  // Separable: column sums per window row, then horizontal window.
  std::vector<Real> colsum(xs.w);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const Real* ip = X + pl * xs.plane();
    Real* op = out.data() + pl * os.plane();
    for (int oy = 0; oy < OH; ++oy) {
      std::fill(colsum.begin(), colsum.end(), 0.0);
      for (int ky = 0; ky < kh; ++ky) {
        const Real* row = ip + static_cast<std::size_t>(oy * sh + ky) * xs.w;
        for (int ix = 0; ix < xs.w; ++ix) colsum[ix] += row[ix];
      }
      for (int ox = 0; ox < OW; ++ox) {
        Real acc = 0.0;
        for (int kx = 0; kx < kw; ++kx) acc += colsum[ox * sw + kx];
        op[static_cast<std::size_t>(oy) * OW + ox] = acc * inv;
      }
    }
  }
  return make_result(os, std::move(out), {x}, [xs, os, kh, kw, sh, sw, inv](detail::Node& self) {
    auto& dX = self.parents[0]->ensure_grad();
    const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
    std::vector<Real> rowacc(xs.w);
    for (std::size_t pl = 0; pl < planes; ++pl) {
      const Real* gp = self.grad.data() + pl * os.plane();
      Real* dp = dX.data() + pl * xs.plane();
      for (int oy = 0; oy < os.h; ++oy) {
        std::fill(rowacc.begin(), rowacc.end(), 0.0);
        for (int ox = 0; ox < os.w; ++ox) {
          const Real g = gp[static_cast<std::size_t>(oy) * os.w + ox] * inv;
          for (int kx = 0; kx < kw; ++kx) rowacc[ox * sw + kx] += g;
        }
        for (int ky = 0; ky < kh; ++ky) {
          Real* row = dp + static_cast<std::size_t>(oy * sh + ky) * xs.w;
          for (int ix = 0; ix < xs.w; ++ix) row[ix] += rowacc[ix];
        }
      }
    }
  });
}

Tensor max_pool2d(const Tensor& x, int kh, int kw, int sh, int sw) {
  const Shape4 xs = x.shape();
  if (kh < 1 || kw < 1 || sh < 1 || sw < 1)
    throw ShapeError("max_pool2d: kernel and stride must be positive");
  if (kh > xs.h || kw > xs.w)
    throw ShapeError("max_pool2d: kernel larger than input " + xs.str());
  const int OH = (xs.h - kh) / sh + 1, OW = (xs.w - kw) / sw + 1;
  const Shape4 os{xs.n, xs.c, OH, OW};
  std::vector<Real> out(os.numel());
  std::vector<std::size_t> argmax(os.numel());
  const Real* X = x.data().data();
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const std::size_t ioff = pl * xs.plane();
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        Real best = -std::numeric_limits<Real>::infinity();
        std::size_t best_i = ioff;
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const std::size_t i = ioff + static_cast<std::size_t>(oy * sh + ky) * xs.w + ox * sw + kx;
            if (X[i] > best) {
              best = X[i];
              best_i = i;
            }
          }
        const std::size_t o = pl * os.plane() + static_cast<std::size_t>(oy) * OW + ox;
        out[o] = best;
        argmax[o] = best_i;
      }
  }
  return make_result(os, std::move(out), {x}, [argmax = std::move(argmax)](detail::Node& self) {
    auto& dX = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < argmax.size(); ++o) dX[argmax[o]] += self.grad[o];
  });
}

Tensor avg_pool_channels(const Tensor& x, int kernel, int stride) {
  const Shape4 xs = x.shape();
  if (kernel < 1 || stride < 1)
    throw ShapeError("avg_pool_channels: kernel and stride must be positive");
  if (kernel > xs.c)
    throw ShapeError("avg_pool_channels: kernel larger than channel count");
  const int OC = (xs.c - kernel) / stride + 1;
  const Shape4 os{xs.n, OC, xs.h, xs.w};
  const std::size_t plane = xs.plane();
  const Real inv = 1.0 / kernel;
  std::vector<Real> out(os.numel(), 0.0);
  const Real* X = x.data().data();
  for (int n = 0; n < xs.n; ++n)
    for (int oc = 0; oc < OC; ++oc) {
      Real* op = out.data() + (static_cast<std::size_t>(n) * OC + oc) * plane;
      for (int j = 0; j < kernel; ++j) {
        const Real* ip = X + (static_cast<std::size_t>(n) * xs.c + oc * stride + j) * plane;
        for (std::size_t i = 0; i < plane; ++i) op[i] += ip[i];
      }
      for (std::size_t i = 0; i < plane; ++i) op[i] *= inv;
    }
  return make_result(os, std::move(out), {x}, [xs, OC, kernel, stride, inv](detail::Node& self) {
    auto& dX = self.parents[0]->ensure_grad();
    const std::size_t plane = xs.plane();
    for (int n = 0; n < xs.n; ++n)
      for (int oc = 0; oc < OC; ++oc) {
        const Real* gp = self.grad.data() + (static_cast<std::size_t>(n) * OC + oc) * plane;
        for (int j = 0; j < kernel; ++j) {
          Real* dp = dX.data() + (static_cast<std::size_t>(n) * xs.c + oc * stride + j) * plane;
          for (std::size_t i = 0; i < plane; ++i) dp[i] += gp[i] * inv;
        }
      }
  });
}

Tensor softmax_channels(const Tensor& x) {
  const Shape4 xs = x.shape();
  const std::size_t plane = xs.plane();
  std::vector<Real> out(xs.numel());
  const Real* X = x.data().data();
  for (int n = 0; n < xs.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * xs.c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      Real mx = -std::numeric_limits<Real>::infinity();
      for (int c = 0; c < xs.c; ++c) mx = std::max(mx, X[base + c * plane + i]);
      Real z = 0.0;
      for (int c = 0; c < xs.c; ++c) {
        const Real e = std::exp(X[base + c * plane + i] - mx);
        out[base + c * plane + i] = e;
        z += e;
      }
      for (int c = 0; c < xs.c; ++c) out[base + c * plane + i] /= z;
    }
  }
  Tensor y = make_result(xs, std::move(out), {x}, nullptr);
  if (!y.requires_grad()) return y;
  // The backward needs the output values; install it after construction.
  auto* ynode = y.node_ptr().get();
  ynode->backward = [xs](detail::Node& self) {
    auto& dX = self.parents[0]->ensure_grad();
    const std::size_t plane = xs.plane();
    for (int n = 0; n < xs.n; ++n) {
      const std::size_t base = static_cast<std::size_t>(n) * xs.c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        Real dot = 0.0;
        for (int c = 0; c < xs.c; ++c)
          dot += self.data[base + c * plane + i] * self.grad[base + c * plane + i];
        for (int c = 0; c < xs.c; ++c) {
          const std::size_t k = base + c * plane + i;
          dX[k] += self.data[k] * (self.grad[k] - dot);
        }
      }
    }
  };
  return y;
}

namespace {

struct AxisInterp {
  std::vector<int> lo, hi;
  std::vector<Real> frac;
};

AxisInterp make_axis(int in, int out) {
  AxisInterp a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.frac.resize(out);
  const Real scale = static_cast<Real>(in) / out;
  for (int o = 0; o < out; ++o) {
    Real src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int l = static_cast<int>(std::floor(src));
    if (l > in - 1) l = in - 1;
    a.lo[o] = l;
    a.hi[o] = std::min(l + 1, in - 1);
    a.frac[o] = src - l;
  }
  return a;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
  const Shape4 xs = x.shape();
  if (out_h < 1 || out_w < 1) throw ShapeError("upsample_bilinear: bad size");
  const Shape4 os{xs.n, xs.c, out_h, out_w};
  const AxisInterp ay = make_axis(xs.h, out_h), ax = make_axis(xs.w, out_w);
  std::vector<Real> out(os.numel());
  const Real* X = x.data().data();
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const Real* ip = X + pl * xs.plane();
    Real* op = out.data() + pl * os.plane();
    for (int oy = 0; oy < out_h; ++oy) {
      const Real fy = ay.frac[oy];
      const Real* r0 = ip + static_cast<std::size_t>(ay.lo[oy]) * xs.w;
      const Real* r1 = ip + static_cast<std::size_t>(ay.hi[oy]) * xs.w;
      for (int ox = 0; ox < out_w; ++ox) {
        const Real fx = ax.frac[ox];
        const int l = ax.lo[ox], h = ax.hi[ox];
        const Real top = r0[l] * (1 - fx) + r0[h] * fx;
        const Real bot = r1[l] * (1 - fx) + r1[h] * fx;
        op[static_cast<std::size_t>(oy) * out_w + ox] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return make_result(os, std::move(out), {x}, [xs, os, ay, ax](detail::Node& self) {
    auto& dX = self.parents[0]->ensure_grad();
    const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
    for (std::size_t pl = 0; pl < planes; ++pl) {
      const Real* gp = self.grad.data() + pl * os.plane();
      Real* dp = dX.data() + pl * xs.plane();
      for (int oy = 0; oy < os.h; ++oy) {
        const Real fy = ay.frac[oy];
        Real* r0 = dp + static_cast<std::size_t>(ay.lo[oy]) * xs.w;
        Real* r1 = dp + static_cast<std::size_t>(ay.hi[oy]) * xs.w;
        for (int ox = 0; ox < os.w; ++ox) {
          const Real g = gp[static_cast<std::size_t>(oy) * os.w + ox];
          const Real fx = ax.frac[ox];
          const int l = ax.lo[ox], h = ax.hi[ox];
          r0[l] += g * (1 - fy) * (1 - fx);
          r0[h] += g * (1 - fy) * fx;
          r1[l] += g * fy * (1 - fx);
          r1[h] += g * fy * fx;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise and reductions.

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& d = p.ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& d = pa.ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& d = pb.ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& d = pa.ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& d = pb.ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * pa.data[i];
    }
  });
}

Tensor scale(const Tensor& x, Real s) {
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * s;
  return make_result(x.shape(), std::move(out), {x}, [s](detail::Node& self) {
    auto& d = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * s;
  });
}

Tensor square(const Tensor& x) {
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * x.data()[i];
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    auto& d = p.ensure_grad();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * p.data[i] * self.grad[i];
  });
}

Tensor sqrt(const Tensor& x) {
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real v = x.data()[i];
    if (v < 0.0) throw Error("sqrt: negative input");
    out[i] = std::sqrt(v);
  }
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& d = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (self.data[i] > 0.0) d[i] += self.grad[i] * 0.5 / self.data[i];
  });
}

Tensor channel_scale(const Tensor& x, std::span<const Real> factors) {
  const Shape4 xs = x.shape();
  if (factors.size() != static_cast<std::size_t>(xs.c))
    throw ShapeError("channel_scale: expected " + std::to_string(xs.c) +
                     " factors, got " + std::to_string(factors.size()));
  std::vector<Real> f(factors.begin(), factors.end());
  const std::size_t plane = xs.plane();
  std::vector<Real> out(xs.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.data()[i] * f[(i / plane) % xs.c];
  return make_result(xs, std::move(out), {x}, [f, plane, c = xs.c](detail::Node& self) {
    auto& d = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * f[(i / plane) % c];
  });
}

Tensor sum(const Tensor& x) {
  Real s = 0.0;
  for (Real v : x.data()) s += v;
  return make_result({1, 1, 1, 1}, {s}, {x}, [](detail::Node& self) {
    auto& d = self.parents[0]->ensure_grad();
    for (Real& v : d) v += self.grad[0];
  });
}

Tensor sum_per_sample(const Tensor& x) {
  const Shape4 xs = x.shape();
  const std::size_t per = xs.numel() / xs.n;
  std::vector<Real> out(xs.n, 0.0);
  for (int n = 0; n < xs.n; ++n) {
    Real s = 0.0;
    for (std::size_t i = 0; i < per; ++i) s += x.data()[n * per + i];
    out[n] = s;
  }
  return make_result({xs.n, 1, 1, 1}, std::move(out), {x}, [per](detail::Node& self) {
    auto& d = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i / per];
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<Real>(x.numel()));
}

Tensor add_scalars(std::span<const Tensor> terms) {
  std::vector<Tensor> inputs;
  Real s = 0.0;
  for (const auto& t : terms) {
    if (!t.defined()) continue;
    s += t.item();
    inputs.push_back(t);
  }
  return make_result({1, 1, 1, 1}, {s}, inputs, [](detail::Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      p->ensure_grad()[0] += self.grad[0];
    }
  });
}

}  // namespace rcil
