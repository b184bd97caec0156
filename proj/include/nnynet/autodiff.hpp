#pragma once
// Reverse-mode automatic differentiation over Tensor values.
//
// A Var is a handle to a graph node. Every op allocates a fresh node whose
// id is drawn from a process-wide monotone counter, so parents always carry
// smaller ids than their children. backward() therefore visits the reachable
// subgraph in strictly decreasing id order, which is a reverse topological
// order and fixes the accumulation order of every gradient buffer.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nnynet/tensor.hpp"

namespace nnynet {

template <typename T>
class Var;

namespace detail {

template <typename T>
class GradSink;

template <typename T>
struct Node {
  Tensor<T> value;
  std::string_view op;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor<T>& grad_out, GradSink<T>& sink)> backward;
  bool requires_grad = false;
  std::uint64_t id = 0;
};

std::uint64_t next_node_id();
bool grad_recording_enabled();

// Gives a node's backward rule access to its parents' gradient buffers.
template <typename T>
class GradSink {
 public:
  GradSink(const Node<T>& node, std::unordered_map<const Node<T>*, Tensor<T>>& grads) : node_(node), grads_(grads) {}

  bool wants(std::size_t parent) const { return node_.parents[parent]->requires_grad; }

  // Zero-initialized on first touch.
  Tensor<T>& buffer(std::size_t parent) {
    const Node<T>* p = node_.parents[parent].get();
    auto it = grads_.find(p);
    if (it == grads_.end()) it = grads_.emplace(p, Tensor<T>::zeros(p->value.shape())).first;
    return it->second;
  }

  void add(std::size_t parent, const Tensor<T>& g) {
    if (!wants(parent)) return;
    Tensor<T>& buf = buffer(parent);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
  }

 private:
  const Node<T>& node_;
  std::unordered_map<const Node<T>*, Tensor<T>>& grads_;
};

}  // namespace detail

template <typename T>
class Var {
 public:
  using BackwardFn = std::function<void(const Tensor<T>&, detail::GradSink<T>&)>;

  Var() = default;

  static Var constant(Tensor<T> value) { return make_leaf(std::move(value), false); }
  static Var leaf(Tensor<T> value, bool requires_grad = true) { return make_leaf(std::move(value), requires_grad); }

  // Op node. Parents and the backward rule are dropped when no parent
  // requires a gradient or recording is disabled.
  static Var from_op(std::string_view op, Tensor<T> value, std::vector<Var> parents, BackwardFn backward) {
    auto node = std::make_shared<detail::Node<T>>();
    node->value = std::move(value);
    node->op = op;
    node->id = detail::next_node_id();
    bool any = false;
    for (const Var& p : parents) any = any || p.requires_grad();
    if (any && detail::grad_recording_enabled()) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (Var& p : parents) node->parents.push_back(std::move(p.node_));
      node->backward = std::move(backward);
    }
    return Var(std::move(node));
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rank() const { return node_->value.rank(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_->parents.empty(); }
  std::string_view op() const { return node_->op; }
  std::uint64_t id() const { return node_->id; }
  const detail::Node<T>* node() const noexcept { return node_.get(); }

  // Optimizer hook: replaces a leaf's value in place.
  void assign(Tensor<T> value) {
    if (!is_leaf()) throw ContractError("Var::assign on non-leaf node '" + std::string(op()) + "'");
    if (value.shape() != shape()) {
      throw ShapeError("Var::assign: " + shape_str(value.shape()) + " into " + shape_str(shape()));
    }
    node_->value = std::move(value);
  }

 private:
  explicit Var(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

  static Var make_leaf(Tensor<T> value, bool requires_grad) {
    auto node = std::make_shared<detail::Node<T>>();
    node->value = std::move(value);
    node->op = "leaf";
    node->requires_grad = requires_grad;
    node->id = detail::next_node_id();
    return Var(std::move(node));
  }

  std::shared_ptr<detail::Node<T>> node_;
};

// d(root)/d(leaf) for every reachable leaf that requires a gradient.
template <typename T>
class GradientMap {
 public:
  bool has(const Var<T>& v) const { return grads_.count(v.id()) != 0; }
  // Zeros when v was not reached from the root.
  Tensor<T> of(const Var<T>& v) const {
    auto it = grads_.find(v.id());
    return it == grads_.end() ? Tensor<T>::zeros(v.shape()) : it->second;
  }
  std::size_t size() const { return grads_.size(); }

 private:
  template <typename U>
  friend GradientMap<U> backward(const Var<U>& root);
  std::unordered_map<std::uint64_t, Tensor<T>> grads_;
};

template <typename T>
GradientMap<T> backward(const Var<T>& root);

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace nnynet
