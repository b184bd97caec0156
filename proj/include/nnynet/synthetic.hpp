#pragma once
// Seeded synthetic cases: ellipsoidal organs with distinct intensity bands in
// a noisy background, plus a tabular record describing them.

#include <cstdint>
#include <vector>

#include "nnynet/nrrd_io.hpp"
#include "nnynet/volume.hpp"

namespace nnynet::synthetic {

struct SyntheticCase {
  Volume volume;
  LabelMask mask;
  io::PatientRecord record;
};

struct SyntheticOptions {
  double background_hu = 0.0;
  double band_step_hu = 100.0;   // organ k sits near k * band_step
  double band_jitter_hu = 20.0;  // per-case offset of each band
  double noise_hu = 15.0;
  double min_semi_axis = 0.15;   // fraction of the extent
  double max_semi_axis = 0.3;
};

// Tabular features per organ k = 1..C-1: voxel volume (in units of 100
// voxels) and mean band intensity (in units of 100 HU). F = 2 (C - 1).
std::size_t feature_count(std::size_t num_classes);

std::vector<SyntheticCase> synth_dataset(std::uint64_t seed, std::size_t n, const Shape& shape,
                                         std::size_t num_classes, const SyntheticOptions& opts = {});

}  // namespace nnynet::synthetic
