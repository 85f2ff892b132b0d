// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mocolsk/error.hpp"

namespace mocolsk {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

/// Dense row-major array. Feature maps use (batch, channels, height, width).
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape))
      throw ShapeError("tensor data size " + std::to_string(data.size()) + " does not match shape " +
                       to_string(shape));
  }

  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  int rank() const { return static_cast<int>(shape.size()); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  T& at(int b, int c, int h, int w) {
    return data[((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  const T& at(int b, int c, int h, int w) const {
    return data[((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  std::span<T> span() { return data; }
  std::span<const T> span() const { return data; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

inline void require_rank(const Shape& s, int r, const char* what) {
  if (static_cast<int>(s.size()) != r)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " + to_string(s));
}

// ---------------------------------------------------------------------------
// Reverse-mode automatic differentiation.

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording in the enclosing scope.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

namespace detail {
inline std::uint64_t*& branch_sink() {
  thread_local std::uint64_t* sink = nullptr;
  return sink;
}
inline bool branches_traced() { return branch_sink() != nullptr; }
inline void record_branch(std::uint64_t v) {
  if (std::uint64_t* h = branch_sink()) *h = (*h ^ (v + 0x9E3779B97F4A7C15ULL)) * 1099511628211ULL;
}
}  // namespace detail

/// While alive, non-smooth ops (ReLU family, max selections) fold their
/// branch decisions into a hash. Two evaluations with equal hashes lie on the
/// same smooth piece of the function.
class BranchTrace {
 public:
  BranchTrace() : prev_(detail::branch_sink()) { detail::branch_sink() = &hash_; }
  ~BranchTrace() { detail::branch_sink() = prev_; }
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;
  std::uint64_t hash() const { return hash_; }

 private:
  std::uint64_t hash_ = 1469598103934665603ULL;
  std::uint64_t* prev_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Handle to a graph node. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> t, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(t);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  int dim(std::size_t i) const { return node_->value.shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }

  /// Gradient accumulated by the last backward pass; zeros if none reached it.
  std::vector<T> grad() const {
    if (node_->grad.empty()) return std::vector<T>(node_->value.size(), T(0));
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

  /// Scalar value of a one-element variable.
  T item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar " + to_string(shape()));
    return node_->value.data[0];
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds the result node of an op. Records the backward closure only when
/// grad mode is on and some parent needs gradients.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
  Var<T> out(std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  Node<T>* n = out.node();
  n->requires_grad = true;
  n->parents.reserve(parents.size());
  for (auto& p : parents) n->parents.push_back(p.ptr());
  n->backward = std::move(backward);
  return out;
}

/// Runs reverse accumulation from a scalar root (seed 1) or from an explicit seed.
template <typename T>
void backward(const Var<T>& root, const std::vector<T>* seed = nullptr) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS; graphs get deep enough to matter for the stack.
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  auto& g = root.node()->grad_buffer();
  if (seed) {
    if (seed->size() != g.size()) throw ShapeError("backward seed size mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*seed)[i];
  } else {
    if (g.size() != 1) throw ShapeError("backward() without seed needs a scalar root");
    g[0] += T(1);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace mocolsk
