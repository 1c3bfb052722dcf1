#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mmdt/tensor.hpp"

namespace mmdt {

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, allocated as zeros on first use.
  Tensor<S>& grad_buffer() {
    if (grad.empty() && value.size() > 0) grad = Tensor<S>::zeros_like(value);
    if (grad.shape() != value.shape()) grad = Tensor<S>::zeros_like(value);
    return grad;
  }
};

/// Handle to a node of the reverse-mode graph. Copies share the node.
template <typename S>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<S> value, bool requires_grad = false)
      : node_(std::make_shared<Node<S>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<S>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<S>& value() const { return node_->value; }
  /// Mutable access to the stored value; only meaningful for leaves.
  Tensor<S>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(Index i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }

  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor<S>& grad() const { return node_->grad; }
  Tensor<S>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<S>(); }

  /// Constant copy sharing no graph history.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node<S>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<S>> node_;
};

/// Builds an op result. Records the backward closure only when some input needs a gradient
/// and recording is enabled.
template <typename S>
Var<S> make_result(Tensor<S> value, std::vector<Var<S>> inputs,
                   std::function<void(Node<S>&)> backward_fn) {
  auto node = std::make_shared<Node<S>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) node->inputs.push_back(in.node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Var<S>(std::move(node));
}

/// Accumulates gradients of a scalar `loss` into every reachable leaf that requires them.
template <typename S>
void backward(const Var<S>& loss) {
  if (!loss.requires_grad()) return;
  if (loss.value().size() != 1) throw ShapeError("backward() needs a scalar loss");

  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<S>* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    // Intermediate gradients are no longer needed once propagated.
    if (node->backward_fn) node->grad = Tensor<S>();
  }
}

/// Input gradient slot helper used inside backward closures.
template <typename S>
inline Tensor<S>* input_grad(Node<S>& self, std::size_t i) {
  auto& in = self.inputs[i];
  return in->requires_grad ? &in->grad_buffer() : nullptr;
}

}  // namespace mmdt
