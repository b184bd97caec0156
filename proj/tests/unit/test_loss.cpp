#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "nnynet/loss.hpp"
#include "nnynet/selftest.hpp"

using namespace nnynet;
using namespace nnynet::loss;

namespace {

Var<double> probs(std::vector<double> p, std::size_t c) {
  const std::size_t n = p.size() / c;
  return Var<double>::constant(Tensor<double>({n, c}, std::move(p)));
}

// Random softmax rows and one-hot targets.
std::pair<Tensor<double>, Tensor<double>> instance(std::uint64_t seed, std::size_t n, std::size_t c) {
  const Tensor<double> logits = testutil::uniform<double>({n, c}, seed, -3, 3);
  const Tensor<double> s = softmax(Var<double>::constant(logits), 1).value();
  Tensor<double> g({n, c}, 0.0);
  std::mt19937_64 rng(seed + 1000);
  for (std::size_t i = 0; i < n; ++i) g.at(i, rng() % c) = 1.0;
  return {s, g};
}

double scalar(const Var<double>& v) { return v.value().data()[0]; }

}  // namespace

TEST_CASE("hand-evaluated loss values") {
  const Tensor<double> g({1, 2}, std::vector<double>{1, 0});
  CHECK(std::abs(scalar(ce_loss(probs({0.5, 0.5}, 2), g)) - std::log(2.0)) < 1e-15);
  CHECK(std::abs(scalar(ce_loss(probs({0.5, 0.5}, 2), g)) - 0.693147) < 1e-6);
  CHECK(scalar(ce_loss(probs({1, 0}, 2), g)) == 0.0);
  CHECK(std::abs(scalar(dice_loss(probs({0.8, 0.2}, 2), g, 0.0)) - (1.0 - 1.6 / 1.68)) < 1e-15);
  CHECK(std::abs(scalar(dice_loss(probs({0.8, 0.2}, 2), g, 0.0)) - 0.047619) < 1e-6);
  CHECK(scalar(dice_loss(probs({1, 0}, 2), g, 0.0)) == 0.0);
  const Tensor<double> g3({1, 3}, std::vector<double>{0, 1, 0});
  CHECK(std::abs(scalar(focal_loss(probs({0.05, 0.9, 0.05}, 3), g3, 2.0)) + 0.01 * std::log(0.9)) < 1e-15);
  CHECK(std::abs(scalar(focal_loss(probs({0.05, 0.9, 0.05}, 3), g3, 2.0)) - 0.00105361) < 1e-6);
  CHECK(scalar(focal_loss(probs({0, 1, 0}, 3), g3, 2.0)) == 0.0);

  LossConfig cfg;
  cfg.dice_smooth = 0.0;
  const double ln = -std::log(0.8);
  const double total = scalar(total_loss(probs({0.8, 0.2}, 2), g, cfg));
  CHECK(std::abs(total - (ln + (1.0 - 1.6 / 1.68) + 0.04 * ln)) < 1e-12);
  cfg.alpha = {1, 0, 0};
  CHECK(std::abs(scalar(total_loss(probs({0.8, 0.2}, 2), g, cfg)) - ln) < 1e-15);
  cfg.alpha = {1, 1, 1};
  CHECK(scalar(total_loss(probs({1, 0}, 2), g, cfg)) == 0.0);
  // the probability floor keeps log finite
  CHECK(std::isfinite(scalar(ce_loss(probs({0, 1}, 2), g))));
  CHECK(std::abs(scalar(ce_loss(probs({0, 1}, 2), g)) + std::log(kProbFloor)) < 1e-9);
}

TEST_CASE("loss properties on random instances") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 1 + rng() % 32, c = 2 + rng() % 3;
    auto [s, g] = instance(seed, n, c);
    const Var<double> sv = Var<double>::constant(s);
    const double ce = scalar(ce_loss(sv, g));
    CHECK(std::abs(scalar(focal_loss(sv, g, 0.0)) - ce) < 1e-9);
    const double d = scalar(dice_loss(sv, g, 0.0));
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    const LossConfig cfg;
    const double t = scalar(total_loss(sv, g, cfg));
    CHECK(t >= 0.0);

    // shuffling voxels together leaves every term unchanged
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<double> ps({n, c}), pg({n, c});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        ps.at(i, k) = s.at(perm[i], k);
        pg.at(i, k) = g.at(perm[i], k);
      }
    CHECK(std::abs(scalar(total_loss(Var<double>::constant(ps), pg, cfg)) - t) < 1e-12);
  }
}

TEST_CASE("class weights scale the focal term") {
  auto [s, g] = instance(3, 10, 3);
  const Var<double> sv = Var<double>::constant(s);
  const double base = scalar(focal_loss(sv, g, 2.0));
  CHECK(std::abs(scalar(focal_loss(sv, g, 2.0, {2.0, 2.0, 2.0})) - 2.0 * base) < 1e-14);
  CHECK_THROWS(focal_loss(sv, g, 2.0, {1.0, 1.0}));
}

TEST_CASE("loss gradients") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto [s, g] = instance(seed, 6, 3);
    Tensor<double> shifted = s;
    for (double& x : shifted.data()) x = 0.05 + 0.9 * x;  // keep away from the floor
    const Var<double> leaf = Var<double>::leaf(shifted);
    const std::vector<Var<double>> leaves{leaf};
    LossConfig cfg;
    selftest::GradCheckOptions opts;
    opts.seed = seed;
    CHECK(selftest::gradcheck([&] { return ce_loss(leaf, g); }, leaves, opts).max_rel_error < 1e-4);
    CHECK(selftest::gradcheck([&] { return dice_loss(leaf, g, 1e-5); }, leaves, opts).max_rel_error < 1e-4);
    CHECK(selftest::gradcheck([&] { return focal_loss(leaf, g, 2.0); }, leaves, opts).max_rel_error < 1e-4);
    const Var<double> logits = Var<double>::leaf(testutil::uniform<double>({3, 2, 2, 1}, seed));
    const Tensor<int> labels = testutil::random_labels({2, 2, 1}, 3, seed);
    CHECK(selftest::gradcheck([&] { return segmentation_loss(logits, labels, cfg); }, {logits}, opts).max_rel_error <
          1e-4);
  }
}

TEST_CASE("voxel probabilities and one-hot targets") {
  const Var<double> logits = Var<double>::constant(testutil::uniform<double>({3, 2, 3, 2}, 4));
  const Tensor<double> p = voxel_probabilities(logits).value();
  CHECK(p.shape() == Shape{12, 3});
  for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(p.at(i, 0) + p.at(i, 1) + p.at(i, 2) - 1.0) < 1e-12);
  // row i is voxel (x, y, z) in row-major order
  const double a = logits.value().at(0, 1, 2, 1), b = logits.value().at(1, 1, 2, 1), c = logits.value().at(2, 1, 2, 1);
  CHECK(std::abs(p.at(11, 1) - std::exp(b) / (std::exp(a) + std::exp(b) + std::exp(c))) < 1e-12);

  const Tensor<int> labels = testutil::random_labels({2, 3, 2}, 3, 5);
  const Tensor<double> oh = one_hot<double>(labels, 3);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(oh.at(i, 0) + oh.at(i, 1) + oh.at(i, 2) == 1.0);
    CHECK(oh.at(i, static_cast<std::size_t>(labels.data()[i])) == 1.0);
  }
  Tensor<int> bad = labels;
  bad.data()[0] = 3;
  CHECK_THROWS(one_hot<double>(bad, 3));

  LossConfig cfg;
  cfg.alpha = {0, 0, 0};
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = LossConfig{};
  cfg.focal_gamma = -1;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}
