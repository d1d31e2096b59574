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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcil {

using Real = double;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Extents of a rank-4 (batch, channel, height, width) array.
struct Shape4 {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

namespace detail {

struct Node {
  Shape4 shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into the parents' grad buffers.
  std::function<void(Node& self)> backward;

  std::vector<Real>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense rank-4 tensor of doubles with reverse-mode gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage. Use clone()
/// for an independent copy. Leaf tensors with requires_grad accumulate
/// gradients across backward() calls until zero_grad() is called.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape4 shape, bool requires_grad = false);
  static Tensor full(Shape4 shape, Real value, bool requires_grad = false);
  static Tensor from_data(Shape4 shape, std::vector<Real> values,
                          bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape4& shape() const { return node().shape; }
  std::size_t numel() const { return node().data.size(); }

  std::span<const Real> data() const { return node().data; }
  /// Mutable view of the values. Only meaningful on leaves (parameters, inputs).
  std::span<Real> mutable_data() { return node().data; }

  Real at(int n, int c, int h, int w) const;
  Real& at(int n, int c, int h, int w);
  Real item() const;

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool flag);
  bool is_leaf() const { return node().is_leaf; }

  bool has_grad() const { return node().grad.size() == node().data.size(); }
  std::span<const Real> grad() const { return node().grad; }
  void zero_grad() { node().grad.clear(); }

  /// Same values, no graph history, no gradient requirement.
  Tensor detach() const;
  /// Independent deep copy as a leaf; keeps the requires_grad flag.
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  detail::Node& node() const;
  std::shared_ptr<detail::Node> node_;
};

/// Runs reverse-mode differentiation from a single-element tensor.
///
/// Gradients accumulate into every reachable leaf that requires grad.
/// Throws ShapeError if `loss` has more than one element.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Creates a result node; records the graph edge only when grad mode is on
/// and at least one input requires grad.
Tensor make_result(Shape4 shape, std::vector<Real> values,
                   const std::vector<Tensor>& inputs,
                   std::function<void(detail::Node&)> backward_fn);

/// Counters for inference-cost instrumentation.
struct OpCounter {
  std::uint64_t conv_calls = 0;
  std::uint64_t macs = 0;
  void reset() { *this = OpCounter{}; }
};

OpCounter& op_counter();

void check_finite(const Tensor& t, const char* where);

}  // namespace rcil
