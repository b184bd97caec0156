#include <algorithm>
#include <cmath>

#include "nnynet/preprocess.hpp"

namespace nnynet::preprocess {

void AugmentConfig::validate() const {
  auto prob = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError(std::string("augment: ") + what + " must lie in [0, 1]");
  };
  for (double p : flip_prob) prob(p, "flip probability");
  prob(rot90_prob, "rot90 probability");
  prob(contrast_prob, "contrast probability");
  prob(noise_prob, "noise probability");
  prob(blur_prob, "blur probability");
  if (!(contrast_range[0] > 0.0 && contrast_range[0] <= contrast_range[1])) {
    throw ContractError("augment: contrast range must be positive and ordered");
  }
  if (noise_sigma < 0.0) throw ContractError("augment: noise sigma must be nonnegative");
  if (!(blur_sigma_range[0] >= 0.0 && blur_sigma_range[0] <= blur_sigma_range[1])) {
    throw ContractError("augment: blur sigma range must be nonnegative and ordered");
  }
}

template <typename T>
Tensor<T> flip_axis(const Tensor<T>& x, std::size_t axis) {
  if (x.rank() != 3 || axis > 2) throw ShapeError("flip_axis: expected a 3-D grid and axis < 3");
  const Shape& s = x.shape();
  Tensor<T> out(s, T{});
  for (std::size_t i = 0; i < s[0]; ++i) {
    for (std::size_t j = 0; j < s[1]; ++j) {
      for (std::size_t k = 0; k < s[2]; ++k) {
        std::size_t p[3] = {i, j, k};
        p[axis] = s[axis] - 1 - p[axis];
        out.at(i, j, k) = x.at(p[0], p[1], p[2]);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> rot90(const Tensor<T>& x, std::size_t a, std::size_t b, int k) {
  if (x.rank() != 3 || a > 2 || b > 2 || a == b) throw ShapeError("rot90: expected a 3-D grid and two distinct axes");
  const Shape& s = x.shape();
  if (s[a] != s[b]) throw ShapeError("rot90: plane extents differ in " + shape_str(s));
  k = ((k % 4) + 4) % 4;
  Tensor<T> cur = x;
  const std::size_t n = s[a];
  for (int r = 0; r < k; ++r) {
    Tensor<T> next(s, T{});
    for (std::size_t i = 0; i < s[0]; ++i) {
      for (std::size_t j = 0; j < s[1]; ++j) {
        for (std::size_t l = 0; l < s[2]; ++l) {
          std::size_t p[3] = {i, j, l};
          const std::size_t pa = p[a], pb = p[b];
          p[a] = pb;
          p[b] = n - 1 - pa;
          next.at(i, j, l) = cur.at(p[0], p[1], p[2]);
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

Tensor<float> gaussian_blur(const Tensor<float>& x, double sigma) {
  if (x.rank() != 3) throw ShapeError("gaussian_blur: expected a 3-D grid");
  if (sigma <= 0.0) return x;
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> kernel;
  double norm = 0.0;
  for (long t = -radius; t <= radius; ++t) {
    kernel.push_back(std::exp(-0.5 * static_cast<double>(t * t) / (sigma * sigma)));
    norm += kernel.back();
  }
  for (double& kv : kernel) kv /= norm;
  const Shape& s = x.shape();
  Tensor<float> cur = x;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Tensor<float> next(s, 0.0f);
    const auto n = static_cast<long>(s[axis]);
    for (std::size_t i = 0; i < s[0]; ++i) {
      for (std::size_t j = 0; j < s[1]; ++j) {
        for (std::size_t k = 0; k < s[2]; ++k) {
          std::size_t p[3] = {i, j, k};
          const long c = static_cast<long>(p[axis]);
          double acc = 0.0;
          for (long t = -radius; t <= radius; ++t) {
            p[axis] = static_cast<std::size_t>(std::clamp(c + t, 0L, n - 1));
            acc += kernel[static_cast<std::size_t>(t + radius)] * cur.at(p[0], p[1], p[2]);
          }
          next.at(i, j, k) = static_cast<float>(acc);
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

void augment(Tensor<float>& image, Tensor<int>& mask, const AugmentConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (image.shape() != mask.shape() || image.rank() != 3) {
    throw ShapeError("augment: image " + shape_str(image.shape()) + " vs mask " + shape_str(mask.shape()));
  }
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  // Every draw happens unconditionally so the stream position never depends on outcomes.
  for (std::size_t a = 0; a < 3; ++a) {
    if (u01(rng) < cfg.flip_prob[a]) {
      image = flip_axis(image, a);
      mask = flip_axis(mask, a);
    }
  }
  const double rot_draw = u01(rng), plane_draw = u01(rng), turns_draw = u01(rng);
  if (rot_draw < cfg.rot90_prob) {
    const Shape& s = image.shape();
    std::vector<std::pair<std::size_t, std::size_t>> planes;
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t b = a + 1; b < 3; ++b) {
        if (s[a] == s[b]) planes.emplace_back(a, b);
      }
    }
    if (!planes.empty()) {
      const auto& [a, b] = planes[std::min(planes.size() - 1, static_cast<std::size_t>(plane_draw * planes.size()))];
      const int k = 1 + std::min(2, static_cast<int>(turns_draw * 3));
      image = rot90(image, a, b, k);
      mask = rot90(mask, a, b, k);
    }
  }
  const double contrast_draw = u01(rng), contrast_factor = u01(rng);
  if (contrast_draw < cfg.contrast_prob) {
    const double f = cfg.contrast_range[0] + contrast_factor * (cfg.contrast_range[1] - cfg.contrast_range[0]);
    double mean = 0.0;
    for (float v : image.data()) mean += v;
    mean /= static_cast<double>(image.size());
    for (float& v : image.data()) v = static_cast<float>((v - mean) * f + mean);
  }
  const double noise_draw = u01(rng);
  std::mt19937_64 noise_rng(rng());
  if (noise_draw < cfg.noise_prob && cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> n(0.0, cfg.noise_sigma);
    for (float& v : image.data()) v = static_cast<float>(v + n(noise_rng));
  }
  const double blur_draw = u01(rng), blur_sigma = u01(rng);
  if (blur_draw < cfg.blur_prob) {
    const double sigma = cfg.blur_sigma_range[0] + blur_sigma * (cfg.blur_sigma_range[1] - cfg.blur_sigma_range[0]);
    image = gaussian_blur(image, sigma);
  }
}

template Tensor<float> flip_axis(const Tensor<float>&, std::size_t);
template Tensor<int> flip_axis(const Tensor<int>&, std::size_t);
template Tensor<float> rot90(const Tensor<float>&, std::size_t, std::size_t, int);
template Tensor<int> rot90(const Tensor<int>&, std::size_t, std::size_t, int);

}  // namespace nnynet::preprocess
