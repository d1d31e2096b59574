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

#include "rcil/cl_losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

#include "rcil/ops.hpp"

namespace rcil {

void ClassPartition::validate() const {
  std::set<int> seen{0};
  for (int c : old_classes) {
    if (c == 0) throw Error("class partition: old set contains background");
    if (!seen.insert(c).second) throw Error("class partition: duplicate class " + std::to_string(c));
  }
  for (int c : new_classes) {
    if (c == 0) throw Error("class partition: new set contains background");
    if (!seen.insert(c).second)
      throw Error("class partition: class " + std::to_string(c) + " is both old and new");
  }
  const int k = num_channels();
  if (*seen.rbegin() != k - 1)
    throw Error("class partition does not cover channels 0.." + std::to_string(k - 1));
}

namespace {

struct PixelView {
  const Real* base;
  std::size_t plane;
  Real operator[](int c) const { return base[c * plane]; }
};

Real logsumexp(const PixelView& z, const std::vector<int>& idx) {
  Real mx = -std::numeric_limits<Real>::infinity();
  for (int k : idx) mx = std::max(mx, z[k]);
  if (!std::isfinite(mx)) return mx;
  Real s = 0.0;
  for (int k : idx) s += std::exp(z[k] - mx);
  return mx + std::log(s);
}

void check_labels_shape(const Tensor& logits, const LabelMap& labels, const char* op) {
  const Shape4 s = logits.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w ||
      labels.labels.size() != static_cast<std::size_t>(s.n) * s.h * s.w)
    throw ShapeError(std::string(op) + ": label map does not match logits " + s.str());
}

std::vector<int> iota_vec(int k) {
  std::vector<int> v(k);
  for (int i = 0; i < k; ++i) v[i] = i;
  return v;
}

// Wraps a precomputed loss value and its gradient into a graph node.
Tensor scalar_with_grad(Real value, std::vector<Real> grad, const Tensor& input) {
  return make_result({1, 1, 1, 1}, {value}, {input}, [g = std::move(grad)](detail::Node& self) {
    auto& d = self.parents[0]->ensure_grad();
    const Real s = self.grad[0];
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * g[i];
  });
}

}  // namespace

Tensor unce_loss(const Tensor& logits, const LabelMap& labels, const ClassPartition& part) {
  part.validate();
  const Shape4 s = logits.shape();
  if (s.c != part.num_channels())
    throw ShapeError("unce_loss: logits have " + std::to_string(s.c) +
                     " channels, partition expects " + std::to_string(part.num_channels()));
  check_labels_shape(logits, labels, "unce_loss");
  std::vector<bool> is_old(s.c, false), is_new(s.c, false);
  for (int c : part.old_classes) is_old[c] = true;
  for (int c : part.new_classes) is_new[c] = true;
  std::vector<int> bg_set{0};
  for (int c : part.old_classes) bg_set.push_back(c);
  const std::vector<int> all = iota_vec(s.c);

  const std::size_t plane = s.plane();
  const Real* Z = logits.data().data();
  std::vector<Real> grad(logits.numel(), 0.0);
  Real total = 0.0;
  std::size_t count = 0;
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      const int y = labels.labels[static_cast<std::size_t>(n) * plane + i];
      if (y == kIgnoreLabel) continue;
      if (y < 0 || y >= s.c)
        throw Error("unce_loss: label " + std::to_string(y) + " outside head range");
      if (is_old[y])
        throw Error("unce_loss: label " + std::to_string(y) +
                    " is an old class; it must be relabeled to background");
      ++count;
      const std::size_t base = static_cast<std::size_t>(n) * s.c * plane + i;
      PixelView z{Z + base, plane};
      const Real lse = logsumexp(z, all);
      Real* g = grad.data() + base;
      for (int k = 0; k < s.c; ++k) g[k * plane] = std::exp(z[k] - lse);
      if (y == 0) {
        const Real lse_bg = logsumexp(z, bg_set);
        total += lse - lse_bg;
        for (int k : bg_set) g[k * plane] -= std::exp(z[k] - lse_bg);
      } else {
        total += lse - z[y];
        g[y * plane] -= 1.0;
      }
    }
  if (count == 0) return make_result({1, 1, 1, 1}, {0.0}, {logits}, [](detail::Node&) {});
  const Real inv = 1.0 / static_cast<Real>(count);
  for (auto& v : grad) v *= inv;
  return scalar_with_grad(total * inv, std::move(grad), logits);
}

Tensor ce_loss(const Tensor& logits, const LabelMap& labels) {
  const Shape4 s = logits.shape();
  ClassPartition part;
  for (int c = 1; c < s.c; ++c) part.new_classes.push_back(c);
  return unce_loss(logits, labels, part);
}

namespace {

// Shared body of unkd_loss / kd_loss. With `absorb` the student's
// background takes the mass of every channel outside the teacher's space;
// otherwise the student is renormalized over the teacher's channels.
Tensor distill_logits(const Tensor& logits_s, const Tensor& logits_t,
                      const ClassPartition& part, const LabelMap* labels, bool absorb,
                      const char* op) {
  part.validate();
  const Shape4 ss = logits_s.shape(), ts = logits_t.shape();
  const int kt = 1 + static_cast<int>(part.old_classes.size());
  if (ss.c != part.num_channels() || ts.c != kt)
    throw ShapeError(std::string(op) + ": expected teacher " + std::to_string(kt) +
                     " and student " + std::to_string(part.num_channels()) +
                     " channels, got " + std::to_string(ts.c) + " and " + std::to_string(ss.c));
  if (ss.n != ts.n || ss.h != ts.h || ss.w != ts.w)
    throw ShapeError(std::string(op) + ": teacher/student spatial shape mismatch");
  if (labels) check_labels_shape(logits_s, *labels, op);

  std::vector<int> teacher_to_student{0};
  std::vector<int> sorted_old = part.old_classes;
  std::sort(sorted_old.begin(), sorted_old.end());
  for (int c : sorted_old) teacher_to_student.push_back(c);
  std::vector<int> bg_set{0};
  for (int c : part.new_classes) bg_set.push_back(c);
  const std::vector<int> all = iota_vec(ss.c);
  const std::vector<int> teacher_all = iota_vec(kt);

  const std::size_t plane = ss.plane();
  const Real* Zs = logits_s.data().data();
  const Real* Zt = logits_t.data().data();
  std::vector<Real> grad(logits_s.numel(), 0.0);
  std::vector<Real> pt(kt);
  Real total = 0.0;
  std::size_t count = 0;
  for (int n = 0; n < ss.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      if (labels && labels->labels[static_cast<std::size_t>(n) * plane + i] == kIgnoreLabel)
        continue;
      ++count;
      PixelView zt{Zt + static_cast<std::size_t>(n) * kt * plane + i, plane};
      const Real lse_t = logsumexp(zt, teacher_all);
      for (int j = 0; j < kt; ++j) pt[j] = std::exp(zt[j] - lse_t);

      const std::size_t base = static_cast<std::size_t>(n) * ss.c * plane + i;
      PixelView z{Zs + base, plane};
      Real* g = grad.data() + base;
      if (absorb) {
        const Real lse = logsumexp(z, all);
        const Real lse_bg = logsumexp(z, bg_set);
        total -= pt[0] * (lse_bg - lse);
        for (int j = 1; j < kt; ++j) total -= pt[j] * (z[teacher_to_student[j]] - lse);
        Real mass = 0.0;
        for (int j = 0; j < kt; ++j) mass += pt[j];
        for (int k = 0; k < ss.c; ++k) g[k * plane] += mass * std::exp(z[k] - lse);
        for (int k : bg_set) g[k * plane] -= pt[0] * std::exp(z[k] - lse_bg);
        for (int j = 1; j < kt; ++j) g[teacher_to_student[j] * plane] -= pt[j];
      } else {
        const Real lse = logsumexp(z, teacher_to_student);
        Real mass = 0.0;
        for (int j = 0; j < kt; ++j) {
          total -= pt[j] * (z[teacher_to_student[j]] - lse);
          mass += pt[j];
        }
        for (int j = 0; j < kt; ++j) {
          const int k = teacher_to_student[j];
          g[k * plane] += mass * std::exp(z[k] - lse) - pt[j];
        }
      }
    }
  if (count == 0) return make_result({1, 1, 1, 1}, {0.0}, {logits_s}, [](detail::Node&) {});
  const Real inv = 1.0 / static_cast<Real>(count);
  for (auto& v : grad) v *= inv;
  return scalar_with_grad(total * inv, std::move(grad), logits_s);
}

}  // namespace

Tensor unkd_loss(const Tensor& logits_s, const Tensor& logits_t,
                 const ClassPartition& part, const LabelMap* labels) {
  return distill_logits(logits_s, logits_t, part, labels, true, "unkd_loss");
}

Tensor kd_loss(const Tensor& logits_s, const Tensor& logits_t,
               const ClassPartition& part, const LabelMap* labels) {
  return distill_logits(logits_s, logits_t, part, labels, false, "kd_loss");
}

Real adaptive_factor(const ClassPartition& part, const LossWeights& w) {
  const int bg = w.count_background ? 1 : 0;
  const int all = static_cast<int>(part.old_classes.size() + part.new_classes.size()) + bg;
  const int current = static_cast<int>(part.new_classes.size()) + bg;
  if (part.new_classes.empty())
    throw Error("adaptive factor undefined: the current step has no classes");
  return std::sqrt(static_cast<Real>(all) / static_cast<Real>(current));
}

Tensor total_loss(const LossTerms& terms, Real kd_factor, const LossWeights& w) {
  std::vector<Tensor> parts;
  if (terms.ce.defined()) parts.push_back(terms.ce);
  if (terms.kd.defined()) parts.push_back(scale(terms.kd, w.lambda * kd_factor));
  if (terms.skd.defined()) parts.push_back(scale(terms.skd, w.gamma));
  if (terms.ckd.defined()) parts.push_back(scale(terms.ckd, w.gamma));
  if (parts.empty()) throw Error("total_loss: no loss terms");
  return add_scalars(parts);
}

Tensor total_loss(const LossTerms& terms, const ClassPartition& part, const LossWeights& w) {
  const Real factor = terms.kd.defined() ? adaptive_factor(part, w) : 1.0;
  return total_loss(terms, factor, w);
}

}  // namespace rcil
