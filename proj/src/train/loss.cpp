#include "nnynet/loss.hpp"

#include <string>

namespace nnynet::loss {

void LossConfig::validate() const {
  bool any = false;
  for (double a : alpha) {
    if (a < 0) throw ContractError("loss: term weights must be nonnegative");
    any = any || a > 0;
  }
  if (!any) throw ContractError("loss: at least one term weight must be positive");
  if (focal_gamma < 0) throw ContractError("loss: focal gamma must be nonnegative");
  for (double a : focal_alpha) {
    if (a < 0) throw ContractError("loss: focal class weights must be nonnegative");
  }
  if (dice_smooth < 0) throw ContractError("loss: dice smoothing must be nonnegative");
}

namespace {

template <typename T>
void check_pair(const Var<T>& s, const Tensor<T>& g, const char* who) {
  if (s.rank() != 2) throw ShapeError(std::string(who) + ": probabilities must be [N, C], got " + shape_str(s.shape()));
  if (s.shape() != g.shape()) {
    throw ShapeError(std::string(who) + ": target shape " + shape_str(g.shape()) + " does not match " +
                     shape_str(s.shape()));
  }
}

template <typename T>
T voxel_count(const Var<T>& s) {
  return static_cast<T>(s.shape()[0]);
}

}  // namespace

template <typename T>
Var<T> ce_loss(const Var<T>& s, const Tensor<T>& g) {
  check_pair(s, g, "ce_loss");
  const Var<T> logs = log(clamp_min(s, static_cast<T>(kProbFloor)));
  return scale(sum(mul(logs, Var<T>::constant(g))), T(-1) / voxel_count(s));
}

template <typename T>
Var<T> dice_loss(const Var<T>& s, const Tensor<T>& g, double eps) {
  check_pair(s, g, "dice_loss");
  const Var<T> gv = Var<T>::constant(g);
  const T e = static_cast<T>(eps);
  const Var<T> num = add_scalar(scale(sum(mul(gv, s)), T(2)), e);
  const Var<T> den = add_scalar(add(sum(mul(gv, gv)), sum(mul(s, s))), e);
  return add_scalar(neg(div(num, den)), T(1));
}

template <typename T>
Var<T> focal_loss(const Var<T>& s, const Tensor<T>& g, double gamma, const std::vector<double>& class_alpha) {
  check_pair(s, g, "focal_loss");
  const std::size_t c = s.shape()[1];
  if (!class_alpha.empty() && class_alpha.size() != c) {
    throw ShapeError("focal_loss: " + std::to_string(class_alpha.size()) + " class weights for " + std::to_string(c) +
                     " classes");
  }
  // g * alpha_c folded into one constant weight tensor.
  Tensor<T> weight = g;
  if (!class_alpha.empty()) {
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] *= static_cast<T>(class_alpha[i % c]);
  }
  Var<T> term = neg(log(clamp_min(s, static_cast<T>(kProbFloor))));
  if (gamma != 0.0) {
    const Var<T> one_minus = add_scalar(neg(s), T(1));
    term = mul(pow_scalar(clamp_min(one_minus, T(0)), static_cast<T>(gamma)), term);
  }
  return scale(sum(mul(term, Var<T>::constant(weight))), T(1) / voxel_count(s));
}

template <typename T>
Var<T> total_loss(const Var<T>& s, const Tensor<T>& g, const LossConfig& cfg) {
  cfg.validate();
  check_pair(s, g, "total_loss");
  Var<T> total;
  auto accumulate = [&](double a, const Var<T>& term) {
    if (a == 0.0) return;
    const Var<T> weighted = a == 1.0 ? term : scale(term, static_cast<T>(a));
    total = total.defined() ? add(total, weighted) : weighted;
  };
  accumulate(cfg.alpha[0], ce_loss(s, g));
  accumulate(cfg.alpha[1], dice_loss(s, g, cfg.dice_smooth));
  accumulate(cfg.alpha[2], focal_loss(s, g, cfg.focal_gamma, cfg.focal_alpha));
  return total;
}

template <typename T>
Var<T> voxel_probabilities(const Var<T>& logits) {
  if (logits.rank() != 4) throw ShapeError("voxel_probabilities: expected [K, X, Y, Z], got " + shape_str(logits.shape()));
  const std::size_t k = logits.shape()[0];
  const std::size_t n = logits.value().size() / k;
  return softmax(permute(reshape(logits, {k, n}), {1, 0}), 1);
}

template <typename T>
Tensor<T> one_hot(const Tensor<int>& labels, std::size_t num_classes) {
  Tensor<T> out({labels.size(), num_classes}, T(0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw std::out_of_range("one_hot: label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) +
                              ")");
    }
    out[i * num_classes + static_cast<std::size_t>(l)] = T(1);
  }
  return out;
}

template <typename T>
Var<T> segmentation_loss(const Var<T>& logits, const Tensor<int>& labels, const LossConfig& cfg) {
  const Var<T> s = voxel_probabilities(logits);
  if (labels.size() != s.shape()[0]) {
    throw ShapeError("segmentation_loss: label volume " + shape_str(labels.shape()) + " does not match logits " +
                     shape_str(logits.shape()));
  }
  return total_loss(s, one_hot<T>(labels, s.shape()[1]), cfg);
}

#define NNYNET_INST(T)                                                                        \
  template Var<T> ce_loss(const Var<T>&, const Tensor<T>&);                                   \
  template Var<T> dice_loss(const Var<T>&, const Tensor<T>&, double);                         \
  template Var<T> focal_loss(const Var<T>&, const Tensor<T>&, double, const std::vector<double>&); \
  template Var<T> total_loss(const Var<T>&, const Tensor<T>&, const LossConfig&);             \
  template Var<T> voxel_probabilities(const Var<T>&);                                         \
  template Tensor<T> one_hot(const Tensor<int>&, std::size_t);                                \
  template Var<T> segmentation_loss(const Var<T>&, const Tensor<int>&, const LossConfig&);
NNYNET_INST(float)
NNYNET_INST(double)
#undef NNYNET_INST

}  // namespace nnynet::loss
