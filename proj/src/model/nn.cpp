#include "nnynet/nn.hpp"

#include <cmath>
#include <random>

namespace nnynet::nn {

std::uint64_t fnv1a(std::string_view s, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
Var<T> ParameterStore<T>::add(const std::string& name, Tensor<T> value) {
  if (contains(name)) throw ContractError("parameter '" + name + "' registered twice");
  Var<T> v = Var<T>::leaf(std::move(value), true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, v);
  return v;
}

template <typename T>
Var<T> ParameterStore<T>::normal(const std::string& name, Shape shape, double stddev) {
  std::mt19937_64 rng(fnv1a(name, seed_ ^ 0x9e3779b97f4a7c15ULL));
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
  return add(name, std::move(t));
}

template <typename T>
Var<T> ParameterStore<T>::constant(const std::string& name, Shape shape, T value) {
  return add(name, Tensor<T>::full(std::move(shape), value));
}

template <typename T>
Var<T> ParameterStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.value().size();
  return n;
}

template <typename T>
LinearWeights<T> make_linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                             bool bias) {
  LinearWeights<T> w;
  w.weight = store.normal(name + ".weight", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
  if (bias) w.bias = store.zeros(name + ".bias", {out});
  return w;
}

template <typename T>
LayerNormWeights<T> make_layer_norm(ParameterStore<T>& store, const std::string& name, std::size_t channels) {
  return {store.ones(name + ".gamma", {channels}), store.zeros(name + ".beta", {channels})};
}

template <typename T>
MlpWeights<T> make_mlp(ParameterStore<T>& store, const std::string& name, std::size_t channels, std::size_t hidden) {
  return {make_linear(store, name + ".fc1", channels, hidden), make_linear(store, name + ".fc2", hidden, channels)};
}

template <typename T>
Var<T> linear(const Var<T>& x, const LinearWeights<T>& w) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("linear: rank-0 input");
  const std::size_t in = s.back();
  const std::size_t out = w.weight.shape()[1];
  Var<T> flat = reshape(x, {x.value().size() / in, in});
  Var<T> y = matmul(flat, w.weight);
  if (w.bias.defined()) y = add(y, w.bias);
  Shape out_shape = s;
  out_shape.back() = out;
  return reshape(y, std::move(out_shape));
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const LayerNormWeights<T>& w) {
  return nnynet::layer_norm(x, w.gamma, w.beta);
}

template <typename T>
Var<T> mlp(const Var<T>& x, const MlpWeights<T>& w) {
  return linear(gelu(linear(x, w.fc1)), w.fc2);
}

#define NNYNET_INST(T)                                                                                            \
  template class ParameterStore<T>;                                                                               \
  template LinearWeights<T> make_linear(ParameterStore<T>&, const std::string&, std::size_t, std::size_t, bool); \
  template LayerNormWeights<T> make_layer_norm(ParameterStore<T>&, const std::string&, std::size_t);             \
  template MlpWeights<T> make_mlp(ParameterStore<T>&, const std::string&, std::size_t, std::size_t);             \
  template Var<T> linear(const Var<T>&, const LinearWeights<T>&);                                                 \
  template Var<T> layer_norm(const Var<T>&, const LayerNormWeights<T>&);                                          \
  template Var<T> mlp(const Var<T>&, const MlpWeights<T>&);
NNYNET_INST(float)
NNYNET_INST(double)
#undef NNYNET_INST

}  // namespace nnynet::nn
