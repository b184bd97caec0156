#include "nnynet/optim.hpp"

#include <cmath>

namespace nnynet {

void AdamConfig::validate() const {
  if (!(lr >= 0.0)) throw ContractError("adam: learning rate must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ContractError("adam: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ContractError("adam: eps must be positive");
}

template <typename T>
Adam<T>::Adam(std::vector<Var<T>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : params_) {
    if (!p.is_leaf()) throw ContractError("adam: parameters must be leaves");
    m_.emplace_back(p.value().size(), 0.0);
    v_.emplace_back(p.value().size(), 0.0);
  }
}

template <typename T>
void Adam<T>::step(const GradientMap<T>& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var<T>& p = params_[i];
    if (!grads.has(p)) continue;
    const Tensor<T>& g = grads.of(p);
    Tensor<T> value = p.value();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double update = cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
      value[j] = static_cast<T>(static_cast<double>(value[j]) - update);
    }
    p.assign(std::move(value));
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace nnynet
