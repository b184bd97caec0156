#pragma once

#include <random>

#include "nnynet/nn.hpp"

namespace testutil {

template <typename T>
nnynet::Tensor<T> uniform(const nnynet::Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(lo, hi);
  nnynet::Tensor<T> t(shape);
  for (T& v : t.data()) v = static_cast<T>(ud(rng));
  return t;
}

inline nnynet::Tensor<int> random_labels(const nnynet::Shape& shape, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  nnynet::Tensor<int> t(shape);
  for (int& v : t.data()) v = static_cast<int>(rng() % static_cast<unsigned>(classes));
  return t;
}

// Adds N(0, sd) noise to every stored parameter.
template <typename T>
void jitter(nnynet::nn::ParameterStore<T>& store, std::uint64_t seed, double sd = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, sd);
  for (const auto& [name, p] : store.entries()) {
    nnynet::Tensor<T> v = p.value();
    for (T& x : v.data()) x = static_cast<T>(x + nd(rng));
    nnynet::Var<T>(p).assign(std::move(v));
  }
}

}  // namespace testutil
