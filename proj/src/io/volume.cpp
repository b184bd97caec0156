#include "nnynet/volume.hpp"

#include <algorithm>
#include <cmath>

namespace nnynet {

void validate_geometry(const Shape& shape, const Vec3& spacing, const char* who) {
  if (shape.size() != 3) throw ShapeError(std::string(who) + ": grid must be 3-D, got " + shape_str(shape));
  for (std::size_t e : shape) {
    if (e == 0) throw ContractError(std::string(who) + ": empty extent in " + shape_str(shape));
  }
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ContractError(std::string(who) + ": spacing must be positive");
  }
}

void Volume::validate() const { validate_geometry(grid.shape(), spacing, "volume"); }

void LabelMask::validate() const {
  validate_geometry(grid.shape(), spacing, "label mask");
  for (int v : grid.data()) {
    if (v < 0) throw ContractError("label mask: negative label " + std::to_string(v));
  }
}

int LabelMask::max_label() const {
  int m = 0;
  for (int v : grid.data()) m = std::max(m, v);
  return m;
}

}  // namespace nnynet
