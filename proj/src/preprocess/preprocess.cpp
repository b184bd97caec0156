#include "nnynet/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace nnynet::preprocess {

void PreprocessConfig::validate() const {
  if (!(clip_lo >= 0.0 && clip_lo < clip_hi && clip_hi <= 100.0)) {
    throw ContractError("preprocess: clip percentiles must satisfy 0 <= lo < hi <= 100");
  }
  if (!(patch_scale_factor > 0.0 && patch_scale_factor <= 1.0)) {
    throw ContractError("preprocess: patch_scale_factor must lie in (0, 1]");
  }
  if (target_spacing) {
    for (double s : *target_spacing) {
      if (!(s > 0.0)) throw ContractError("preprocess: target spacing must be positive");
    }
  }
  if (standard_scale) {
    for (std::size_t e : *standard_scale) {
      if (e == 0) throw ContractError("preprocess: standard scale must be positive");
    }
  }
}

namespace {

template <typename T>
Tensor<T> crop_grid(const Tensor<T>& g, const CropBox& box) {
  const Shape out_shape = box.extent();
  Tensor<T> out(out_shape, T{});
  for (std::size_t x = 0; x < out_shape[0]; ++x) {
    for (std::size_t y = 0; y < out_shape[1]; ++y) {
      for (std::size_t z = 0; z < out_shape[2]; ++z) {
        out.at(x, y, z) = g.at(x + box.lo[0], y + box.lo[1], z + box.lo[2]);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> uncrop_grid(const Tensor<T>& g, const CropBox& box, T fill) {
  if (g.shape() != box.extent()) {
    throw ShapeError("uncrop: grid " + shape_str(g.shape()) + " does not match crop box " + shape_str(box.extent()));
  }
  Tensor<T> out(box.original, fill);
  const Shape& s = g.shape();
  for (std::size_t x = 0; x < s[0]; ++x) {
    for (std::size_t y = 0; y < s[1]; ++y) {
      for (std::size_t z = 0; z < s[2]; ++z) out.at(x + box.lo[0], y + box.lo[1], z + box.lo[2]) = g.at(x, y, z);
    }
  }
  return out;
}

Vec3 shifted_origin(const Vec3& origin, const Vec3& spacing, const Extent3& lo) {
  return {origin[0] + spacing[0] * static_cast<double>(lo[0]), origin[1] + spacing[1] * static_cast<double>(lo[1]),
          origin[2] + spacing[2] * static_cast<double>(lo[2])};
}

}  // namespace

CropResult crop_foreground(const Volume& v, const LabelMask& m, const PreprocessConfig& cfg) {
  v.validate();
  if (v.grid.shape() != m.grid.shape()) {
    throw ShapeError("crop_foreground: volume " + shape_str(v.grid.shape()) + " vs mask " + shape_str(m.grid.shape()));
  }
  const Shape& s = v.grid.shape();
  Extent3 lo{s[0], s[1], s[2]}, hi{0, 0, 0};
  bool any = false;
  for (std::size_t x = 0; x < s[0]; ++x) {
    for (std::size_t y = 0; y < s[1]; ++y) {
      for (std::size_t z = 0; z < s[2]; ++z) {
        if (!(v.grid.at(x, y, z) > cfg.background_value)) continue;
        any = true;
        const Extent3 p{x, y, z};
        for (std::size_t a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a] + 1);
        }
      }
    }
  }
  CropResult r;
  r.box.original = s;
  if (!any) {
    r.volume = v;
    r.mask = m;
    r.box.lo = {0, 0, 0};
    r.box.hi = {s[0], s[1], s[2]};
    r.no_foreground = true;
    return r;
  }
  for (std::size_t a = 0; a < 3; ++a) {
    lo[a] = lo[a] > cfg.crop_margin ? lo[a] - cfg.crop_margin : 0;
    hi[a] = std::min(s[a], hi[a] + cfg.crop_margin);
  }
  r.box.lo = lo;
  r.box.hi = hi;
  r.volume.grid = crop_grid(v.grid, r.box);
  r.volume.spacing = v.spacing;
  r.volume.origin = shifted_origin(v.origin, v.spacing, lo);
  r.mask.grid = crop_grid(m.grid, r.box);
  r.mask.spacing = m.spacing;
  r.mask.origin = shifted_origin(m.origin, m.spacing, lo);
  return r;
}

Volume uncrop(const Volume& v, const CropBox& box, float fill) {
  Volume out;
  out.grid = uncrop_grid(v.grid, box, fill);
  out.spacing = v.spacing;
  out.origin = shifted_origin(v.origin, {-v.spacing[0], -v.spacing[1], -v.spacing[2]}, box.lo);
  return out;
}

LabelMask uncrop(const LabelMask& m, const CropBox& box, int fill) {
  LabelMask out;
  out.grid = uncrop_grid(m.grid, box, fill);
  out.spacing = m.spacing;
  out.origin = shifted_origin(m.origin, {-m.spacing[0], -m.spacing[1], -m.spacing[2]}, box.lo);
  return out;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ContractError("percentile: empty sample");
  if (!(p >= 0.0 && p <= 100.0)) throw ContractError("percentile: p must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

IntensityStats intensity_stats(const std::vector<const Volume*>& volumes, const PreprocessConfig& cfg) {
  cfg.validate();
  std::vector<double> all;
  for (const Volume* v : volumes) {
    for (float x : v->grid.data()) all.push_back(x);
  }
  if (all.empty()) throw ContractError("intensity_stats: no voxels");
  IntensityStats s;
  s.lo = percentile(all, cfg.clip_lo);
  s.hi = percentile(all, cfg.clip_hi);
  double sum = 0.0;
  for (double& x : all) {
    x = std::clamp(x, s.lo, s.hi);
    sum += x;
  }
  const auto n = static_cast<double>(all.size());
  s.mean = sum / n;
  double var = 0.0;
  for (double x : all) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / n);
  return s;
}

Volume clip_normalize(const Volume& v, const IntensityStats& stats) {
  if (!std::isfinite(stats.mean) || !std::isfinite(stats.std)) throw ContractError("clip_normalize: non-finite stats");
  if (!(stats.std > 0.0)) throw ContractError("degenerate intensity distribution");
  Volume out = v;
  for (float& x : out.grid.data()) {
    const double c = std::clamp(static_cast<double>(x), stats.lo, stats.hi);
    x = static_cast<float>((c - stats.mean) / stats.std);
  }
  return out;
}

Shape resampled_shape(const Shape& shape, const Vec3& spacing, const Vec3& target) {
  Shape out(3);
  for (std::size_t a = 0; a < 3; ++a) {
    if (!(target[a] > 0.0)) throw ContractError("resample: target spacing must be positive");
    const double e = std::round(static_cast<double>(shape[a]) * spacing[a] / target[a]);
    if (e < 1.0) throw ContractError("resample: axis " + std::to_string(a) + " would have extent < 1");
    out[a] = static_cast<std::size_t>(e);
  }
  return out;
}

namespace {

// Source coordinate for target index j, clamped to [0, n - 1].
double source_coord(std::size_t j, double ratio, std::size_t n) {
  return std::min(static_cast<double>(j) * ratio, static_cast<double>(n - 1));
}

}  // namespace

Volume resample(const Volume& v, const Vec3& target) {
  v.validate();
  if (v.spacing == target) return v;
  const Shape& s = v.grid.shape();
  const Shape o = resampled_shape(s, v.spacing, target);
  Volume out;
  out.grid = Tensor<float>(o, 0.0f);
  out.spacing = target;
  out.origin = v.origin;
  std::array<std::vector<std::size_t>, 3> i0, i1;
  std::array<std::vector<double>, 3> w;
  for (std::size_t a = 0; a < 3; ++a) {
    const double ratio = target[a] / v.spacing[a];
    for (std::size_t j = 0; j < o[a]; ++j) {
      const double x = source_coord(j, ratio, s[a]);
      const auto lo = static_cast<std::size_t>(std::floor(x));
      i0[a].push_back(lo);
      i1[a].push_back(std::min(lo + 1, s[a] - 1));
      w[a].push_back(x - static_cast<double>(lo));
    }
  }
  for (std::size_t x = 0; x < o[0]; ++x) {
    for (std::size_t y = 0; y < o[1]; ++y) {
      for (std::size_t z = 0; z < o[2]; ++z) {
        double acc = 0.0;
        for (int c = 0; c < 8; ++c) {
          const std::size_t ix = (c & 4) ? i1[0][x] : i0[0][x];
          const std::size_t iy = (c & 2) ? i1[1][y] : i0[1][y];
          const std::size_t iz = (c & 1) ? i1[2][z] : i0[2][z];
          const double wt = ((c & 4) ? w[0][x] : 1.0 - w[0][x]) * ((c & 2) ? w[1][y] : 1.0 - w[1][y]) *
                            ((c & 1) ? w[2][z] : 1.0 - w[2][z]);
          if (wt != 0.0) acc += wt * v.grid.at(ix, iy, iz);
        }
        out.grid.at(x, y, z) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

LabelMask resample(const LabelMask& m, const Vec3& target) {
  m.validate();
  if (m.spacing == target) return m;
  const Shape& s = m.grid.shape();
  const Shape o = resampled_shape(s, m.spacing, target);
  LabelMask out;
  out.grid = Tensor<int>(o, 0);
  out.spacing = target;
  out.origin = m.origin;
  std::array<std::vector<std::size_t>, 3> idx;
  for (std::size_t a = 0; a < 3; ++a) {
    const double ratio = target[a] / m.spacing[a];
    for (std::size_t j = 0; j < o[a]; ++j) {
      idx[a].push_back(std::min(static_cast<std::size_t>(std::llround(source_coord(j, ratio, s[a]))), s[a] - 1));
    }
  }
  for (std::size_t x = 0; x < o[0]; ++x) {
    for (std::size_t y = 0; y < o[1]; ++y) {
      for (std::size_t z = 0; z < o[2]; ++z) out.grid.at(x, y, z) = m.grid.at(idx[0][x], idx[1][y], idx[2][z]);
    }
  }
  return out;
}

Vec3 median_spacing(const std::vector<Vec3>& spacings) {
  if (spacings.empty()) throw ContractError("median_spacing: no spacings");
  Vec3 out{};
  for (std::size_t a = 0; a < 3; ++a) {
    std::vector<double> v;
    for (const auto& s : spacings) v.push_back(s[a]);
    out[a] = percentile(v, 50.0);
  }
  return out;
}

Extent3 median_extent(const std::vector<Shape>& shapes) {
  if (shapes.empty()) throw ContractError("median_extent: no shapes");
  Extent3 out{};
  for (std::size_t a = 0; a < 3; ++a) {
    std::vector<double> v;
    for (const auto& s : shapes) {
      if (s.size() != 3) throw ShapeError("median_extent: expected 3-D shapes");
      v.push_back(static_cast<double>(s[a]));
    }
    out[a] = static_cast<std::size_t>(std::llround(percentile(v, 50.0)));
  }
  return out;
}

Extent3 patch_extent(const Extent3& standard_scale, double factor) {
  if (!(factor > 0.0 && factor <= 1.0)) throw ContractError("patch_extent: factor must lie in (0, 1]");
  Extent3 out{};
  for (std::size_t a = 0; a < 3; ++a) {
    out[a] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(standard_scale[a]) * factor)));
  }
  return out;
}

std::vector<Patch> extract_patches(const Volume& v, const LabelMask& m, const Extent3& patch) {
  if (v.grid.shape() != m.grid.shape()) {
    throw ShapeError("extract_patches: volume " + shape_str(v.grid.shape()) + " vs mask " + shape_str(m.grid.shape()));
  }
  for (std::size_t e : patch) {
    if (e == 0) throw ContractError("extract_patches: patch extent must be positive");
  }
  const Shape& s = v.grid.shape();
  std::vector<Patch> out;
  for (std::size_t ox = 0; ox < s[0]; ox += patch[0]) {
    for (std::size_t oy = 0; oy < s[1]; oy += patch[1]) {
      for (std::size_t oz = 0; oz < s[2]; oz += patch[2]) {
        Patch p;
        p.origin = {ox, oy, oz};
        p.valid = {std::min(patch[0], s[0] - ox), std::min(patch[1], s[1] - oy), std::min(patch[2], s[2] - oz)};
        p.image = Tensor<float>({patch[0], patch[1], patch[2]}, 0.0f);
        p.mask = Tensor<int>({patch[0], patch[1], patch[2]}, 0);
        for (std::size_t x = 0; x < p.valid[0]; ++x) {
          for (std::size_t y = 0; y < p.valid[1]; ++y) {
            for (std::size_t z = 0; z < p.valid[2]; ++z) {
              p.image.at(x, y, z) = v.grid.at(ox + x, oy + y, oz + z);
              p.mask.at(x, y, z) = m.grid.at(ox + x, oy + y, oz + z);
            }
          }
        }
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

namespace {

template <typename T, typename Get>
Tensor<T> reassemble(const std::vector<Patch>& patches, const Shape& shape, Get get) {
  Tensor<T> out(shape, T{});
  for (const Patch& p : patches) {
    for (std::size_t x = 0; x < p.valid[0]; ++x) {
      for (std::size_t y = 0; y < p.valid[1]; ++y) {
        for (std::size_t z = 0; z < p.valid[2]; ++z) {
          out.at(p.origin[0] + x, p.origin[1] + y, p.origin[2] + z) = get(p).at(x, y, z);
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor<float> reassemble_image(const std::vector<Patch>& patches, const Shape& shape) {
  return reassemble<float>(patches, shape, [](const Patch& p) -> const Tensor<float>& { return p.image; });
}

Tensor<int> reassemble_mask(const std::vector<Patch>& patches, const Shape& shape) {
  return reassemble<int>(patches, shape, [](const Patch& p) -> const Tensor<int>& { return p.mask; });
}

}  // namespace nnynet::preprocess
