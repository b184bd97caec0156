#pragma once
// Adam over a fixed list of leaf parameters.

#include <string>
#include <utility>
#include <vector>

#include "nnynet/autodiff.hpp"

namespace nnynet {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

template <typename T>
class Adam {
 public:
  Adam(std::vector<Var<T>> params, AdamConfig cfg);

  // Parameters absent from `grads` are left untouched (moments included).
  void step(const GradientMap<T>& grads);
  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Var<T>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace nnynet
