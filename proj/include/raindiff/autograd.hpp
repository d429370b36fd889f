// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

// Tape-free reverse-mode differentiation over straight-line tensor programs.
//
// Every op that has at least one gradient-participating input allocates a
// graph node holding its output value, links to its inputs and a closure
// that pushes the output gradient back into the inputs. `backward` orders
// the reachable nodes topologically and runs each closure exactly once.

#pragma once

#include "raindiff/tensor.hpp"

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace raindiff {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<Scalar>::zeros(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && value.size() > 0; }
};

/// Handle to a value that may participate in differentiation.
namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;
  using scalar_type = Scalar;

  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var constant(Tensor<Scalar> value) { return Var(std::move(value), false); }
  static Var parameter(Tensor<Scalar> value) { return Var(std::move(value), true); }

  /// Builds an interior node. The node is only linked into the graph when
  /// some input requires a gradient; otherwise the result is a plain constant.
  static Var from_op(Tensor<Scalar> value, std::vector<Var> inputs,
                     std::function<void(Node<Scalar>&)> backward_fn) {
    Var out(std::move(value), false);
    if (!detail::grad_enabled) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->is_leaf = false;
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    out.node_->backward_fn = std::move(backward_fn);
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  bool has_grad() const { return node_->has_grad(); }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }

  const NodePtr& node() const { return node_; }

  /// A gradient-free view of the same value.
  Var detach() const { return Var(node_->value, false); }

 private:
  NodePtr node_;
};

using VarF = Var<float>;
using VarD = Var<double>;

/// Propagates d(loss)/d(.) to every gradient-participating leaf reachable
/// from `loss`. Leaf gradients accumulate across calls until cleared.
template <typename Scalar>
void backward(const Var<Scalar>& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  // iterative post-order DFS
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<Scalar>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Node<Scalar>* root = loss.node().get();
  root->grad_buffer().data().setOnes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (node->is_leaf) continue;
    if (node->has_grad()) node->backward_fn(*node);
    if (node != root) node->grad = Tensor<Scalar>();
  }
}

}  // namespace raindiff
