#pragma once
// Image and label grids with physical geometry.

#include <array>

#include "nnynet/tensor.hpp"

namespace nnynet {

using Vec3 = std::array<double, 3>;

struct Volume {
  Tensor<float> grid;  // [X, Y, Z]
  Vec3 spacing{1.0, 1.0, 1.0};  // mm per voxel
  Vec3 origin{0.0, 0.0, 0.0};   // mm

  void validate() const;
};

struct LabelMask {
  Tensor<int> grid;  // [X, Y, Z], values in [0, C)
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  void validate() const;
  int max_label() const;
};

void validate_geometry(const Shape& shape, const Vec3& spacing, const char* who);

}  // namespace nnynet
