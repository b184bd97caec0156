#pragma once
// Composite segmentation objective: weighted cross-entropy, soft Dice and
// focal terms over per-voxel class probabilities.

#include <array>
#include <vector>

#include "nnynet/ops.hpp"

namespace nnynet::loss {

struct LossConfig {
  std::array<double, 3> alpha{1.0, 1.0, 1.0};  // CE, Dice, Focal
  double focal_gamma = 2.0;
  std::vector<double> focal_alpha;  // per class; empty -> all 1
  double dice_smooth = 1e-5;

  void validate() const;
};

inline constexpr double kProbFloor = 1e-12;

// s, g: [N, C]. g is one-hot (rows sum to 1).
template <typename T>
Var<T> ce_loss(const Var<T>& s, const Tensor<T>& g);
template <typename T>
Var<T> dice_loss(const Var<T>& s, const Tensor<T>& g, double eps);
template <typename T>
Var<T> focal_loss(const Var<T>& s, const Tensor<T>& g, double gamma, const std::vector<double>& class_alpha = {});
template <typename T>
Var<T> total_loss(const Var<T>& s, const Tensor<T>& g, const LossConfig& cfg);

// [K, X, Y, Z] logits -> [N, K] softmax probabilities, voxels in row-major order.
template <typename T>
Var<T> voxel_probabilities(const Var<T>& logits);

// Integer label volume [X, Y, Z] -> one-hot [N, K].
template <typename T>
Tensor<T> one_hot(const Tensor<int>& labels, std::size_t num_classes);

// total_loss(softmax(logits), one_hot(labels))
template <typename T>
Var<T> segmentation_loss(const Var<T>& logits, const Tensor<int>& labels, const LossConfig& cfg);

}  // namespace nnynet::loss
