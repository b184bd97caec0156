#pragma once
// Sliding-window prediction with uniform overlap blending, argmax labelling
// and connected-component clean-up of small islands.

#include <array>
#include <functional>
#include <vector>

#include "nnynet/tensor.hpp"

namespace nnynet::inference {

using Extent3 = std::array<std::size_t, 3>;

struct SlidingWindowPlan {
  Extent3 patch{8, 8, 8};
  double overlap = 0.5;

  void validate() const;
  // max(1, round(patch * (1 - overlap))) per axis
  Extent3 stride() const;
};

// Window origins, row-major over (x, y, z). The last origin on each axis is
// clamped so the window ends at the boundary; axes shorter than the patch
// get the single origin 0.
std::vector<Extent3> plan_windows(const Shape& volume, const SlidingWindowPlan& plan);

// Patch [px, py, pz] -> logits [K, px, py, pz]. The window index is passed
// so test doubles can vary by window.
template <typename T>
using WindowModel = std::function<Tensor<T>(const Tensor<T>& patch, std::size_t window)>;

struct SlidingOptions {
  std::vector<std::size_t> order;  // evaluation order; empty -> 0..n-1
  std::size_t threads = 1;
};

// Per-voxel mean of the logits of every window covering it. Windows are
// reduced in index order, so the result is independent of evaluation order
// and thread count. Volumes smaller than the patch are zero padded.
template <typename T>
Tensor<T> sliding_predict(const Tensor<T>& volume, const WindowModel<T>& model, const SlidingWindowPlan& plan,
                          const SlidingOptions& options = {});

// Number of windows covering each voxel.
Tensor<int> coverage(const Shape& volume, const SlidingWindowPlan& plan);

// [K, X, Y, Z] -> [X, Y, Z]; ties go to the smaller class.
template <typename T>
Tensor<int> argmax(const Tensor<T>& logits);

struct ComponentPolicy {
  int connectivity = 26;  // 6 or 26
  std::size_t min_size = 10;

  void validate() const;
};

struct Component {
  int label = 0;
  std::size_t size = 0;
  std::vector<std::size_t> voxels;  // linear indices, first = smallest
};

// Components of every label (background included), ordered by first voxel.
std::vector<Component> components(const Tensor<int>& mask, const ComponentPolicy& policy);

// Components smaller than min_size take the majority label of their outer
// 26-neighbourhood (ties to the smaller label), smallest first. The last
// remaining component of a label is never relabelled.
Tensor<int> merge_small(const Tensor<int>& mask, const ComponentPolicy& policy);

}  // namespace nnynet::inference
