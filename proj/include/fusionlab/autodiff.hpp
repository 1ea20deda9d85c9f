#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fusionlab/tensor.hpp"

namespace fusionlab {

// A vertex of the dynamic reverse-mode graph. Results of operations keep
// their parents alive through shared ownership, so the graph lives exactly as
// long as the root variable that produced it.
template <typename T>
struct Node {
  BasicTensor<T> value;
  BasicTensor<T> grad;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";
  bool requires_grad = false;

  Node(BasicTensor<T> v, bool rg)
      : value(std::move(v)), grad(BasicTensor<T>::zeros(value.shape())), requires_grad(rg) {}
};

template <typename T>
class BasicVar {
 public:
  using value_type = T;
  using tensor_type = BasicTensor<T>;

  BasicVar() = default;
  explicit BasicVar(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const BasicTensor<T>& value() const { return node_->value; }
  const BasicTensor<T>& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }
  bool valid() const { return static_cast<bool>(node_); }

  // Leaf mutation, used by optimizers and checkpoint loading.
  BasicTensor<T>& mutable_value() { return node_->value; }
  BasicTensor<T>& mutable_grad() { return node_->grad; }

  void zero_grad() {
    auto g = node_->grad.data();
    std::fill(g.begin(), g.end(), T{0});
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

using Var = BasicVar<float>;

template <typename T>
BasicVar<T> constant(BasicTensor<T> value) {
  return BasicVar<T>(std::make_shared<Node<T>>(std::move(value), false));
}

template <typename T>
BasicVar<T> parameter(BasicTensor<T> value) {
  return BasicVar<T>(std::make_shared<Node<T>>(std::move(value), true));
}

// Creates an interior node. When no parent requires a gradient the result is
// a plain constant and the backward closure is dropped.
template <typename T>
BasicVar<T> make_result(BasicTensor<T> value, const std::vector<BasicVar<T>>& parents,
                        const char* op, std::function<void(Node<T>&)> backward_fn) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  auto node = std::make_shared<Node<T>>(std::move(value), rg);
  node->op = op;
  if (rg) {
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.shared());
    node->backward_fn = std::move(backward_fn);
  }
  return BasicVar<T>(std::move(node));
}

// grad += delta, elementwise. Shapes must agree.
template <typename T>
void accumulate(Node<T>& target, std::span<const T> delta) {
  if (!target.requires_grad) return;
  auto g = target.grad.data();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

// Nodes reachable from root that require a gradient, in reverse topological
// order (root first); each node appears exactly once.
template <typename T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  if (!root->requires_grad) return order;
  std::unordered_set<Node<T>*> seen{root};
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

// Seeds d(root)/d(root) = 1 and propagates to every reachable node. The root
// must hold a single value. Gradients accumulate, so callers zero parameter
// grads between steps.
template <typename T>
void backward(const BasicVar<T>& root) {
  if (root.value().size() != 1) {
    throw ContractError("backward() requires a scalar root, got shape " +
                        shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;
  root.node()->grad[0] += T{1};
  for (Node<T>* n : topo_order(root.node())) {
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace fusionlab
