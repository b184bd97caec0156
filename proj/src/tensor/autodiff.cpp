#include "nnynet/autodiff.hpp"

#include <algorithm>
#include <unordered_set>

namespace nnynet {

namespace detail {

namespace {
std::atomic<std::uint64_t> g_node_counter{1};
thread_local bool t_recording = true;
}  // namespace

std::uint64_t next_node_id() { return g_node_counter.fetch_add(1, std::memory_order_relaxed); }
bool grad_recording_enabled() { return t_recording; }

}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(detail::t_recording) { detail::t_recording = false; }
NoGradGuard::~NoGradGuard() { detail::t_recording = previous_; }

template <typename T>
GradientMap<T> backward(const Var<T>& root) {
  if (!root.defined()) throw ContractError("backward: undefined root");
  if (root.value().size() != 1) {
    throw ContractError("backward: root must be scalar-valued, got shape " + shape_str(root.shape()));
  }
  GradientMap<T> result;
  if (!root.requires_grad()) return result;

  using NodeT = detail::Node<T>;
  std::vector<const NodeT*> order;
  std::unordered_set<const NodeT*> seen;
  std::vector<const NodeT*> stack{root.node()};
  seen.insert(root.node());
  while (!stack.empty()) {
    const NodeT* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const NodeT* a, const NodeT* b) { return a->id > b->id; });

  std::unordered_map<const NodeT*, Tensor<T>> grads;
  grads.emplace(root.node(), Tensor<T>::full(root.shape(), T(1)));
  for (const NodeT* n : order) {
    auto it = grads.find(n);
    if (it == grads.end()) continue;
    if (n->parents.empty()) {
      result.grads_.emplace(n->id, std::move(it->second));
    } else {
      detail::GradSink<T> sink(*n, grads);
      n->backward(it->second, sink);
    }
    grads.erase(n);
  }
  return result;
}

template GradientMap<float> backward(const Var<float>&);
template GradientMap<double> backward(const Var<double>&);

}  // namespace nnynet
