#pragma once
// Image preparation: foreground crop, percentile clip + z-score, spacing
// resampling, patch tiling and random augmentation.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nnynet/volume.hpp"

namespace nnynet::preprocess {

using Extent3 = std::array<std::size_t, 3>;

struct PreprocessConfig {
  double background_value = -1024.0;
  std::size_t crop_margin = 2;
  double clip_lo = 0.5;   // percentile
  double clip_hi = 99.5;  // percentile
  std::optional<Vec3> target_spacing;       // nullopt -> dataset median
  std::optional<Extent3> standard_scale;    // nullopt -> dataset median extent
  double patch_scale_factor = 0.5;

  void validate() const;
};

struct CropBox {
  Extent3 lo{0, 0, 0};
  Extent3 hi{0, 0, 0};  // exclusive
  Shape original;

  Shape extent() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
};

struct CropResult {
  Volume volume;
  LabelMask mask;
  CropBox box;
  bool no_foreground = false;  // nothing above background; input returned unchanged
};

CropResult crop_foreground(const Volume& v, const LabelMask& m, const PreprocessConfig& cfg);
// Re-embeds a cropped grid into the original extent recorded in `box`.
Volume uncrop(const Volume& v, const CropBox& box, float fill);
LabelMask uncrop(const LabelMask& m, const CropBox& box, int fill = 0);

// Linear-interpolation percentile (p in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double p);

struct IntensityStats {
  double lo = 0, hi = 0;     // clip bounds
  double mean = 0, std = 1;  // of the clipped values
};

// Pooled over all voxels of all volumes.
IntensityStats intensity_stats(const std::vector<const Volume*>& volumes, const PreprocessConfig& cfg);
// clamp to [lo, hi], then (x - mean) / std
Volume clip_normalize(const Volume& v, const IntensityStats& stats);

// Source index of target voxel j is j * new_spacing / old_spacing per axis.
Volume resample(const Volume& v, const Vec3& target_spacing);     // trilinear
LabelMask resample(const LabelMask& m, const Vec3& target_spacing);  // nearest
Shape resampled_shape(const Shape& shape, const Vec3& spacing, const Vec3& target_spacing);

Vec3 median_spacing(const std::vector<Vec3>& spacings);
Extent3 median_extent(const std::vector<Shape>& shapes);
// round(standard_scale * factor) per axis, at least 1
Extent3 patch_extent(const Extent3& standard_scale, double factor);

struct Patch {
  Tensor<float> image;  // patch extent, zero padded at the far edge
  Tensor<int> mask;
  Extent3 origin{0, 0, 0};
  Extent3 valid{0, 0, 0};  // unpadded extent
};

// Non-overlapping tiling with stride = patch extent.
std::vector<Patch> extract_patches(const Volume& v, const LabelMask& m, const Extent3& patch);
Tensor<float> reassemble_image(const std::vector<Patch>& patches, const Shape& shape);
Tensor<int> reassemble_mask(const std::vector<Patch>& patches, const Shape& shape);

struct AugmentConfig {
  std::array<double, 3> flip_prob{0.5, 0.5, 0.5};
  double rot90_prob = 0.25;
  double contrast_prob = 0.15;
  std::array<double, 2> contrast_range{0.75, 1.25};
  double noise_prob = 0.1;
  double noise_sigma = 0.1;
  double blur_prob = 0.1;
  std::array<double, 2> blur_sigma_range{0.5, 1.0};
  std::uint64_t seed = 0;

  void validate() const;
};

// Spatial ops on image and mask alike; intensity ops on the image only.
void augment(Tensor<float>& image, Tensor<int>& mask, const AugmentConfig& cfg, std::mt19937_64& rng);

// Building blocks, exposed for testing.
template <typename T>
Tensor<T> flip_axis(const Tensor<T>& x, std::size_t axis);
// Rotates by k quarter turns in the (a, b) plane; extents along a and b must match.
template <typename T>
Tensor<T> rot90(const Tensor<T>& x, std::size_t a, std::size_t b, int k);
Tensor<float> gaussian_blur(const Tensor<float>& x, double sigma);

}  // namespace nnynet::preprocess
