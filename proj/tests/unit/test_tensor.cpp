#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nnynet/ops.hpp"
#include "nnynet/selftest.hpp"

using namespace nnynet;
using V = Var<double>;
using T = Tensor<double>;

namespace {

V leaf(Shape s, std::vector<double> v) { return V::leaf(T(std::move(s), std::move(v))); }
V cst(Shape s, std::vector<double> v) { return V::constant(T(std::move(s), std::move(v))); }

double gradcheck_max(const std::function<V()>& f, const std::vector<V>& leaves, std::uint64_t seed) {
  selftest::GradCheckOptions o;
  o.seed = seed;
  return selftest::gradcheck(f, leaves, o).max_rel_error;
}

}  // namespace

TEST_CASE("tensor shape arithmetic") {
  CHECK(shape_numel({2, 3, 4}) == 24);
  CHECK(shape_numel({}) == 1);
  CHECK(row_major_strides({2, 3, 4}) == Shape{12, 4, 1});
  T t({2, 3, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  CHECK(t.at(1, 2, 3) == 1 * 12 + 2 * 4 + 3);
  CHECK(broadcast_shapes({2, 1, 3}, {4, 3}) == Shape{2, 4, 3});
  CHECK_THROWS_AS(broadcast_shapes({2, 3}, {4}), ShapeError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
  CHECK_THROWS_AS(T({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("elementwise ops and broadcasting") {
  const V a = cst({2}, {1, 2}), b = cst({2}, {3, 4});
  CHECK(add(a, b).value().vec() == std::vector<double>{4, 6});
  CHECK(sub(a, b).value().vec() == std::vector<double>{-2, -2});
  CHECK(mul(a, b).value().vec() == std::vector<double>{3, 8});
  CHECK(neg(a).value().vec() == std::vector<double>{-1, -2});
  CHECK(clamp_min(cst({3}, {-1, 0.5, 2}), 0.0).value().vec() == std::vector<double>{0, 0.5, 2});

  const V m = cst({2, 3}, {1, 2, 3, 4, 5, 6});
  const V row = cst({3}, {10, 20, 30});
  CHECK(add(m, row).value().vec() == std::vector<double>{11, 22, 33, 14, 25, 36});
  const V col = cst({2, 1}, {100, 200});
  CHECK(add(m, col).value().vec() == std::vector<double>{101, 102, 103, 204, 205, 206});
  CHECK_THROWS_AS(add(m, cst({2}, {1, 2})), ShapeError);
  CHECK_THROWS_AS(elementwise(ElementwiseOp::add, a), ContractError);
}

TEST_CASE("erf matches quadrature") {
  CHECK(erf(cst({1}, {0.0})).value()[0] == 0.0);
  CHECK(std::abs(erf_value(1.0 / std::sqrt(2.0)) - 0.6826895) < 1e-7);
  CHECK(std::abs(selftest::oracle::erf_simpson(1.0 / std::sqrt(2.0)) - 0.6826895) < 1e-7);
  for (double x : {-3.0, -1.2, -0.3, 0.1, 0.7, 1.5, 2.5, 4.0}) {
    CHECK(std::abs(erf_value(x) - selftest::oracle::erf_simpson(x)) < 1e-12);
  }
}

TEST_CASE("matmul") {
  T id({3, 3});
  for (std::size_t i = 0; i < 3; ++i) id.at(i, i) = 1.0;
  const T m = testutil::uniform<double>({3, 4}, 1);
  CHECK(matmul(V::constant(id), V::constant(m)).value() == m);
  CHECK(matmul(cst({1, 2}, {1, 2}), cst({2, 1}, {3, 4})).value().vec() == std::vector<double>{11});

  // integer entries <= 16 make every product and sum exact
  std::mt19937_64 rng(3);
  T a({4, 5}), b({5, 3});
  for (double& v : a.data()) v = static_cast<double>(rng() % 17);
  for (double& v : b.data()) v = static_cast<double>(rng() % 17);
  CHECK(bitwise_equal(matmul(V::constant(a), V::constant(b)).value(), selftest::oracle::matmul(a, b)));

  const T ra = testutil::uniform<double>({4, 5}, 4), rb = testutil::uniform<double>({5, 3}, 5);
  CHECK(max_abs_diff(matmul(V::constant(ra), V::constant(rb)).value(), selftest::oracle::matmul(ra, rb)) < 1e-14);

  // batched and shared-right-operand forms
  const T ba = testutil::uniform<double>({2, 3, 4}, 6), bb = testutil::uniform<double>({2, 4, 2}, 7);
  const T bc = matmul(V::constant(ba), V::constant(bb)).value();
  for (std::size_t k = 0; k < 2; ++k) {
    T sa({3, 4}, std::vector<double>(ba.vec().begin() + k * 12, ba.vec().begin() + (k + 1) * 12));
    T sb({4, 2}, std::vector<double>(bb.vec().begin() + k * 8, bb.vec().begin() + (k + 1) * 8));
    const T ref = selftest::oracle::matmul(sa, sb);
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(bc[k * 6 + i] - ref[i]) < 1e-14);
  }
  CHECK_THROWS_AS(matmul(V::constant(ba), V::constant(rb)), ShapeError);
  CHECK_THROWS_AS(matmul(V::constant(ra), V::constant(ra)), ShapeError);
}

TEST_CASE("softmax") {
  CHECK(softmax(cst({2}, {0, 0}), 0).value().vec() == std::vector<double>{0.5, 0.5});
  const T s = softmax(cst({2}, {std::log(1.0), std::log(3.0)}), 0).value();
  CHECK(std::abs(s[0] - 0.25) < 1e-15);
  CHECK(std::abs(s[1] - 0.75) < 1e-15);
  CHECK(softmax(cst({1}, {42.0}), 0).value().vec() == std::vector<double>{1.0});

  const T x = testutil::uniform<double>({3, 4, 5}, 9, -30, 30);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const T y = softmax(V::constant(x), axis).value();
    T shifted = x;
    for (double& v : shifted.data()) v += 123.0;
    CHECK(max_abs_diff(softmax(V::constant(shifted), axis).value(), y) < 1e-6);
    const T sums = sum(V::constant(y), axis).value();
    for (double v : sums.data()) CHECK(std::abs(v - 1.0) < 1e-6);
    for (double v : y.data()) CHECK(v >= 0.0);
  }
  // large logits stay finite
  const T big = softmax(cst({3}, {1000, 1001, 999}), 0).value();
  for (double v : big.data()) CHECK(std::isfinite(v));
}

TEST_CASE("backward") {
  const V x = leaf({3}, {1, 2, 3});
  const auto g = backward(sum(mul(x, x)));
  CHECK(g.of(x).vec() == std::vector<double>{2, 4, 6});
  CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
  CHECK_THROWS_AS(backward(V()), ContractError);

  // paths through shared subexpressions are summed
  const V y = mul(x, x);
  const auto g2 = backward(sum(add(y, y)));
  CHECK(g2.of(x).vec() == std::vector<double>{4, 8, 12});

  // constants are not differentiated; untouched leaves get zeros
  const V c = cst({3}, {1, 1, 1});
  const V other = leaf({2}, {5, 5});
  const auto g3 = backward(sum(mul(x, c)));
  CHECK_FALSE(g3.has(c));
  CHECK_FALSE(g3.has(other));
  CHECK(g3.of(other).vec() == std::vector<double>{0, 0});
}

TEST_CASE("backward is deterministic") {
  const V x = V::leaf(testutil::uniform<double>({4, 6}, 11));
  const V w = V::leaf(testutil::uniform<double>({6, 3}, 12));
  const V root = sum(mul(softmax(matmul(gelu(x), w), 1), matmul(x, w)));
  const auto a = backward(root), b = backward(root);
  CHECK(bitwise_equal(a.of(x), b.of(x)));
  CHECK(bitwise_equal(a.of(w), b.of(w)));
}

TEST_CASE("finite-difference checks of composite graphs") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const V x = V::leaf(testutil::uniform<double>({3, 5}, seed, -3, 3));
    CHECK(gradcheck_max([&] { return gelu(scale(gelu(x), 1.7)); }, {x}, seed) < 1e-4);
    const V r = V::constant(testutil::uniform<double>({3, 5}, seed + 100));
    CHECK(gradcheck_max([&] { return sum(mul(softmax(x, 1), r)); }, {x}, seed) < 1e-4);
    const V p = V::leaf(testutil::uniform<double>({2, 3}, seed + 200, 0.5, 2.0));
    CHECK(gradcheck_max([&] { return div(log(p), add_scalar(exp(p), 1.0)); }, {p}, seed) < 1e-4);
    CHECK(gradcheck_max([&] { return pow_scalar(p, 2.5); }, {p}, seed) < 1e-4);
    CHECK(gradcheck_max([&] { return max(mul(x, x), 1); }, {x}, seed) < 1e-4);
    CHECK(gradcheck_max([&] { return mean(layer_norm(x, V::constant(T({5}, 1.5)), V::constant(T({5}, 0.1)))); },
                        {x}, seed) < 1e-4);
  }
}

TEST_CASE("shape ops") {
  const V x = cst({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(permute(x, {1, 0}).value().vec() == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(reshape(x, {3, 2}).shape() == Shape{3, 2});
  CHECK(slice(x, 1, 1, 2).value().vec() == std::vector<double>{2, 3, 5, 6});
  CHECK(concat<double>({x, x}, 0).shape() == Shape{4, 3});
  CHECK(roll(x, {0, 1}).value().vec() == std::vector<double>{3, 1, 2, 6, 4, 5});
  CHECK(flip(x, {1}).value().vec() == std::vector<double>{3, 2, 1, 6, 5, 4});
  CHECK(pad(x, {0, 1}, {0, 0}).value().vec() == std::vector<double>{0, 1, 2, 3, 0, 4, 5, 6});
  CHECK(zero_insert(cst({1, 3}, {1, 2, 3}), 1, 2).value().vec() == std::vector<double>{1, 0, 2, 0, 3});
  CHECK(expand(cst({1, 3}, {1, 2, 3}), {2, 3}).value().vec() == std::vector<double>{1, 2, 3, 1, 2, 3});
  CHECK(index_select(x, 1, {2, 0}).value().vec() == std::vector<double>{3, 1, 6, 4});
  CHECK(sum(x, 0).value().vec() == std::vector<double>{5, 7, 9});
  CHECK(max(x, 1).value().vec() == std::vector<double>{3, 6});
  CHECK_THROWS_AS(reshape(x, {4}), ShapeError);
  CHECK_THROWS_AS(slice(x, 1, 2, 2), ShapeError);
  CHECK_THROWS_AS(permute(x, {0, 0}), ShapeError);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const V y = V::leaf(testutil::uniform<double>({2, 3, 4}, seed));
    CHECK(gradcheck_max([&] { return roll(permute(y, {2, 0, 1}), {1, -1, 2}); }, {y}, seed) < 1e-4);
    CHECK(gradcheck_max([&] { return concat<double>({slice(y, 2, 1, 2), flip(y, {0})}, 2); }, {y}, seed) < 1e-4);
    CHECK(gradcheck_max([&] { return zero_insert(pad(y, {0, 1, 0}, {1, 0, 2}), 1, 3); }, {y}, seed) < 1e-4);
    CHECK(gradcheck_max([&] { return index_select(expand(sum(y, 1, true), {2, 5, 4}), 2, {3, 3, 0}); }, {y}, seed) <
          1e-4);
  }
}

TEST_CASE("conv3d matches a direct loop") {
  const T x = testutil::uniform<double>({4, 5, 4, 3}, 21);
  const T w = testutil::uniform<double>({6, 2, 3, 2, 3}, 22);
  const T b = testutil::uniform<double>({6}, 23);
  Conv3dOptions o;
  o.groups = 2;
  o.stride = {2, 1, 1};
  o.padding = {1, 0, 1};
  const T y = conv3d(V::constant(x), V::constant(w), V::constant(b), o).value();
  REQUIRE(y.shape() == Shape{6, 3, 3, 3});
  double worst = 0.0;
  for (std::size_t oc = 0; oc < 6; ++oc) {
    const std::size_t g = oc / 3;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 3; ++k) {
          double acc = b[oc];
          for (std::size_t ic = 0; ic < 2; ++ic)
            for (std::size_t a = 0; a < 3; ++a)
              for (std::size_t bb = 0; bb < 2; ++bb)
                for (std::size_t c = 0; c < 3; ++c) {
                  const long xi = long(i * 2 + a) - 1, xj = long(j + bb), xk = long(k + c) - 1;
                  if (xi < 0 || xi >= 5 || xj >= 4 || xk < 0 || xk >= 3) continue;
                  acc += w.at(oc, ic, a, bb, c) * x.at(g * 2 + ic, std::size_t(xi), std::size_t(xj), std::size_t(xk));
                }
          worst = std::max(worst, std::abs(acc - y.at(oc, i, j, k)));
        }
  }
  CHECK(worst < 1e-13);
  CHECK_THROWS_AS(conv3d(V::constant(x), V::constant(testutil::uniform<double>({6, 3, 1, 1, 1}, 1)), V(), o),
                  ShapeError);
}

TEST_CASE("transposed conv extents") {
  const V x = V::constant(testutil::uniform<double>({2, 3, 4, 5}, 31));
  const V w = V::constant(testutil::uniform<double>({1, 2, 2, 2, 2}, 32));
  CHECK(transposed_conv3d(x, w, V(), 2).shape() == Shape{1, 6, 8, 10});
  const V w3 = V::constant(testutil::uniform<double>({1, 2, 3, 3, 3}, 33));
  CHECK(transposed_conv3d(x, w3, V(), 1).shape() == Shape{1, 5, 6, 7});
  CHECK_THROWS_AS(transposed_conv3d(x, V::constant(testutil::uniform<double>({1, 3, 2, 2, 2}, 1)), V(), 2),
                  ShapeError);
}

TEST_CASE("no-grad guard and leaf assignment") {
  V x = leaf({2}, {1, 2});
  {
    NoGradGuard ng;
    const V y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  const V y = mul(x, x);
  CHECK(y.requires_grad());
  CHECK_THROWS_AS(V(y).assign(T({2}, 0.0)), ContractError);
  CHECK_THROWS_AS(x.assign(T({3}, 0.0)), ShapeError);
  x.assign(T({2}, std::vector<double>{3, 4}));
  CHECK(x.value().vec() == std::vector<double>{3, 4});
  // parents carry smaller ids than children
  CHECK(y.id() > x.id());
}
