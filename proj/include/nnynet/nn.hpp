#pragma once
// Named parameter storage and the small layer helpers shared by the encoder,
// decoder and fusion modules.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nnynet/ops.hpp"

namespace nnynet::nn {

// Stable 64-bit FNV-1a; seeds per-parameter RNG streams.
std::uint64_t fnv1a(std::string_view s, std::uint64_t basis = 1469598103934665603ULL);

// Ordered name -> leaf map. Each parameter draws its initial value from an
// RNG stream keyed by (seed, name), so two stores with the same seed agree
// on every parameter they have in common regardless of creation order.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

  Var<T> normal(const std::string& name, Shape shape, double stddev);
  Var<T> constant(const std::string& name, Shape shape, T value);
  Var<T> zeros(const std::string& name, Shape shape) { return constant(name, std::move(shape), T(0)); }
  Var<T> ones(const std::string& name, Shape shape) { return constant(name, std::move(shape), T(1)); }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Var<T> get(const std::string& name) const;
  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }
  std::size_t scalar_count() const;
  std::uint64_t seed() const { return seed_; }

 private:
  Var<T> add(const std::string& name, Tensor<T> value);

  std::uint64_t seed_;
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
struct LinearWeights {
  Var<T> weight;  // [in, out]
  Var<T> bias;    // [out], may be undefined
};

template <typename T>
struct LayerNormWeights {
  Var<T> gamma;
  Var<T> beta;
};

template <typename T>
struct MlpWeights {
  LinearWeights<T> fc1;
  LinearWeights<T> fc2;
};

// Fan-in scaled normal init; bias zero.
template <typename T>
LinearWeights<T> make_linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                             bool bias = true);
template <typename T>
LayerNormWeights<T> make_layer_norm(ParameterStore<T>& store, const std::string& name, std::size_t channels);
template <typename T>
MlpWeights<T> make_mlp(ParameterStore<T>& store, const std::string& name, std::size_t channels, std::size_t hidden);

// Applies over the last axis of x; leading axes are preserved.
template <typename T>
Var<T> linear(const Var<T>& x, const LinearWeights<T>& w);
template <typename T>
Var<T> layer_norm(const Var<T>& x, const LayerNormWeights<T>& w);
// linear -> GELU -> linear
template <typename T>
Var<T> mlp(const Var<T>& x, const MlpWeights<T>& w);

}  // namespace nnynet::nn
