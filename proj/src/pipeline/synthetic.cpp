#include "nnynet/synthetic.hpp"

#include <cmath>
#include <random>

namespace nnynet::synthetic {

std::size_t feature_count(std::size_t num_classes) { return 2 * (num_classes - 1); }

std::vector<SyntheticCase> synth_dataset(std::uint64_t seed, std::size_t n, const Shape& shape,
                                         std::size_t num_classes, const SyntheticOptions& opts) {
  if (shape.size() != 3) throw ShapeError("synth_dataset: expected a 3-D shape, got " + shape_str(shape));
  for (std::size_t e : shape) {
    if (e < 8) throw ContractError("synth_dataset: every extent must be at least 8");
  }
  if (num_classes < 2) throw ContractError("synth_dataset: at least two classes required");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, opts.noise_hu);

  std::vector<SyntheticCase> out;
  for (std::size_t c = 0; c < n; ++c) {
    SyntheticCase sc;
    sc.volume.grid = Tensor<float>(shape, 0.0f);
    sc.mask.grid = Tensor<int>(shape, 0);
    sc.record.id = "case" + std::to_string(c);
    const std::size_t organs = num_classes - 1;
    std::vector<double> band(organs);
    for (std::size_t k = 0; k < organs; ++k) {
      band[k] = opts.band_step_hu * static_cast<double>(k + 1) + opts.band_jitter_hu * (2.0 * u01(rng) - 1.0);
      std::array<double, 3> centre{}, semi{};
      for (std::size_t a = 0; a < 3; ++a) {
        const auto e = static_cast<double>(shape[a]);
        semi[a] = e * (opts.min_semi_axis + (opts.max_semi_axis - opts.min_semi_axis) * u01(rng));
        centre[a] = semi[a] + (e - 1.0 - 2.0 * semi[a]) * u01(rng);
      }
      for (std::size_t x = 0; x < shape[0]; ++x) {
        for (std::size_t y = 0; y < shape[1]; ++y) {
          for (std::size_t z = 0; z < shape[2]; ++z) {
            const double dx = (static_cast<double>(x) - centre[0]) / semi[0];
            const double dy = (static_cast<double>(y) - centre[1]) / semi[1];
            const double dz = (static_cast<double>(z) - centre[2]) / semi[2];
            if (dx * dx + dy * dy + dz * dz <= 1.0) sc.mask.grid.at(x, y, z) = static_cast<int>(k + 1);
          }
        }
      }
    }
    std::vector<std::size_t> voxels(organs, 0);
    for (std::size_t i = 0; i < sc.mask.grid.size(); ++i) {
      const int l = sc.mask.grid[i];
      const double base = l == 0 ? opts.background_hu : band[static_cast<std::size_t>(l - 1)];
      if (l > 0) ++voxels[static_cast<std::size_t>(l - 1)];
      sc.volume.grid[i] = static_cast<float>(base + noise(rng));
    }
    for (std::size_t k = 0; k < organs; ++k) {
      sc.record.features.push_back(static_cast<double>(voxels[k]) / 100.0);
      sc.record.features.push_back(band[k] / 100.0);
    }
    sc.record.missing.assign(sc.record.features.size(), false);
    sc.record.kind.assign(sc.record.features.size(), io::FeatureKind::continuous);
    out.push_back(std::move(sc));
  }
  return out;
}

}  // namespace nnynet::synthetic
