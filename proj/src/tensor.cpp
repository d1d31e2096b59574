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

#include "rcil/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace rcil {

namespace {
thread_local bool g_grad_enabled = true;
thread_local OpCounter g_op_counter;
}  // namespace

std::string Shape4::str() const {
  std::ostringstream os;
  os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
  return os.str();
}

detail::Node& Tensor::node() const {
  if (!node_) throw Error("use of an undefined tensor");
  return *node_;
}

static void validate_shape(const Shape4& s) {
  if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0)
    throw ShapeError("tensor extents must be positive, got " + s.str());
}

Tensor Tensor::zeros(Shape4 shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(Shape4 shape, Real value, bool requires_grad) {
  validate_shape(shape);
  return from_data(shape, std::vector<Real>(shape.numel(), value),
                   requires_grad);
}

Tensor Tensor::from_data(Shape4 shape, std::vector<Real> values,
                         bool requires_grad) {
  validate_shape(shape);
  if (values.size() != shape.numel())
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape.str());
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from_data({1, 1, 1, 1}, {value}, requires_grad);
}

Real Tensor::at(int n, int c, int h, int w) const {
  const auto& s = shape();
  return node().data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

Real& Tensor::at(int n, int c, int h, int w) {
  const auto& s = shape();
  return node().data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

Real Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("item() on tensor of shape " + shape().str());
  return node().data[0];
}

void Tensor::set_requires_grad(bool flag) {
  if (!node().is_leaf)
    throw Error("requires_grad can only be changed on leaf tensors");
  node().requires_grad = flag;
  if (!flag) node().grad.clear();
}

Tensor Tensor::detach() const {
  return from_data(shape(), node().data, false);
}

Tensor Tensor::clone() const {
  return from_data(shape(), node().data, node().requires_grad);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

OpCounter& op_counter() { return g_op_counter; }

Tensor make_result(Shape4 shape, std::vector<Real> values,
                   const std::vector<Tensor>& inputs,
                   std::function<void(detail::Node&)> backward_fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->data = std::move(values);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
    node->backward = std::move(backward_fn);
  }
  return Tensor::wrap(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward() on undefined tensor");
  if (loss.numel() != 1)
    throw ShapeError("backward() requires a scalar loss, got shape " +
                     loss.shape().str());
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node_ptr().get(), 0);
  visited.insert(loss.node_ptr().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (!n->is_leaf) n->grad.assign(n->data.size(), 0.0);
  }
  detail::Node& root = *loss.node_ptr();
  root.ensure_grad();
  root.grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) n->backward(*n);
  }
  // Free intermediate buffers; leaves keep their accumulated gradient.
  for (detail::Node* n : order) {
    if (!n->is_leaf && n != &root) n->grad.clear();
  }
}

void check_finite(const Tensor& t, const char* where) {
  for (Real v : t.data()) {
    if (!std::isfinite(v))
      throw Error(std::string("non-finite value in ") + where);
  }
}

}  // namespace rcil
