#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nnynet/next_decoder.hpp"
#include "nnynet/selftest.hpp"

using namespace nnynet;
using namespace nnynet::decoder;

namespace {

Var<double> cvar(const Tensor<double>& t) { return Var<double>::constant(t); }

void zero_all(nn::ParameterStore<double>& store, const std::string& prefix) {
  for (const auto& [name, p] : store.entries()) {
    if (name.rfind(prefix, 0) == 0) Var<double>(p).assign(Tensor<double>(p.shape(), 0.0));
  }
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("gelu values") {
  const Tensor<double> x({5}, std::vector<double>{0.0, 1.0, -10.0, 2.5, -0.3});
  const Tensor<double> y = gelu(cvar(x)).value();
  CHECK(y.at(0) == 0.0);
  // 0.5 * (1 + erf(1/sqrt 2)) by quadrature
  CHECK(std::abs(y.at(1) - 0.5 * (1.0 + selftest::oracle::erf_simpson(1.0 / std::sqrt(2.0)))) < 1e-10);
  CHECK(std::abs(y.at(1) - 0.8413447) < 1e-7);
  CHECK(std::abs(y.at(2)) < 1e-8);
  const Tensor<double> r = testutil::uniform<double>({200}, 3, -6, 6);
  const Tensor<double> gp = gelu(cvar(r)).value();
  const Tensor<double> gn = gelu(neg(cvar(r))).value();
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(gp.at(i) - gn.at(i) - r.at(i)) < 1e-6);
}

TEST_CASE("transposed convolution") {
  const Tensor<double> x = testutil::uniform<double>({2, 3, 2, 4}, 4);
  Tensor<double> delta({2, 2, 1, 1, 1}, 0.0);
  delta.at(0, 0, 0, 0, 0) = 1.0;
  delta.at(1, 1, 0, 0, 0) = 1.0;
  CHECK(bitwise_equal(transposed_conv3d(cvar(x), cvar(delta), Var<double>{}, 1).value(), x));

  const Tensor<double> up = transposed_conv3d(cvar(x), cvar(delta), Var<double>{}, 2).value();
  const Tensor<double> zi = zero_insert(cvar(x), 1, 2).value();
  CHECK(bitwise_equal(up, zi));
  CHECK(up.shape() == Shape{2, 5, 3, 7});
  CHECK(up.at(1, 2, 2, 4) == x.at(1, 1, 1, 2));
  CHECK(up.at(1, 1, 2, 4) == 0.0);

  // s = 2, F = 2 doubles every extent
  const Tensor<double> k2 = testutil::uniform<double>({3, 2, 2, 2, 2}, 5);
  CHECK(transposed_conv3d(cvar(x), cvar(k2), Var<double>{}, 2).shape() == Shape{3, 6, 4, 8});
  // head upsampling by p = F = s
  const Tensor<double> k4 = testutil::uniform<double>({1, 2, 4, 4, 4}, 6);
  CHECK(transposed_conv3d(cvar(x), cvar(k4), Var<double>{}, 4).shape() == Shape{1, 12, 8, 16});

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor<double> xi = testutil::uniform<double>({1 + rng() % 2, 1 + rng() % 5, 1 + rng() % 5, 1 + rng() % 5}, seed);
    const Tensor<double> ki =
        testutil::uniform<double>({1 + rng() % 2, xi.shape()[0], 1 + rng() % 3, 1 + rng() % 3, 1 + rng() % 3}, seed + 99);
    const std::size_t s = 1 + rng() % 2;
    const Tensor<double> got = transposed_conv3d(cvar(xi), cvar(ki), Var<double>{}, s).value();
    const Tensor<double> ref = selftest::oracle::transposed_conv(xi, ki, s);
    REQUIRE(got.shape() == ref.shape());
    CHECK(max_abs_diff(got, ref) < 1e-12);
  }
  const Tensor<double> b({3}, std::vector<double>{1, 2, 3});
  const Tensor<double> wb = transposed_conv3d(cvar(x), cvar(k2), cvar(b), 2).value();
  const Tensor<double> nb = transposed_conv3d(cvar(x), cvar(k2), Var<double>{}, 2).value();
  CHECK(std::abs(wb.at(2, 1, 1, 1) - nb.at(2, 1, 1, 1) - 3.0) < 1e-14);
}

TEST_CASE("next block") {
  nn::ParameterStore<double> store(7);
  NextBlockWeights<double> w = make_next_block_weights(store, "blk", 3, 3, 4);
  testutil::jitter(store, 7);
  const Tensor<double> x = testutil::uniform<double>({3, 2, 3, 4}, 8);

  SUBCASE("zero final pointwise weights give the identity") {
    w.pw2.weight.assign(Tensor<double>(w.pw2.weight.shape(), 0.0));
    w.pw2.bias.assign(Tensor<double>(w.pw2.bias.shape(), 0.0));
    CHECK(bitwise_equal(next_block(cvar(x), w).value(), x));
  }
  SUBCASE("channel-constant input reduces to the normalisation shift") {
    // equal channels and kernels make the normalised map exactly zero, so
    // the branch sees beta everywhere
    Tensor<double> k(w.dw_kernel.shape(), 0.0);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 27; ++i) k.data()[c * 27 + i] = 1.0 / 27.0;
    w.dw_kernel.assign(k);
    w.dw_bias.assign(Tensor<double>({3}, 0.0));
    const Tensor<double> c({3, 2, 3, 4}, 1.5);
    const Tensor<double> beta = w.norm.beta.value();
    const Tensor<double>& w1 = w.pw1.weight.value();
    const Tensor<double>& w2 = w.pw2.weight.value();
    std::vector<double> hidden(12), branch(3);
    for (std::size_t j = 0; j < 12; ++j) {
      double s = w.pw1.bias.value().at(j);
      for (std::size_t i = 0; i < 3; ++i) s += beta.at(i) * w1.at(i, j);
      hidden[j] = gelu_ref(s);
    }
    for (std::size_t o = 0; o < 3; ++o) {
      branch[o] = w.pw2.bias.value().at(o);
      for (std::size_t j = 0; j < 12; ++j) branch[o] += hidden[j] * w2.at(j, o);
    }
    const Tensor<double> y = next_block(cvar(c), w).value();
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t i = 0; i < 24; ++i) CHECK(std::abs(y.data()[ch * 24 + i] - (1.5 + branch[ch])) < 1e-12);
  }
  SUBCASE("gradients") {
    std::vector<Var<double>> leaves{Var<double>::leaf(x), w.dw_kernel, w.dw_bias, w.norm.gamma, w.norm.beta,
                                    w.pw1.weight, w.pw2.weight};
    const selftest::GradCheckResult r = selftest::gradcheck([&] { return next_block(leaves[0], w); }, leaves);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.checked > 100);
  }
  CHECK_THROWS_AS(next_block(cvar(Tensor<double>({3, 2, 2})), w), ShapeError);
}

TEST_CASE("decode") {
  swin::SwinConfig enc_cfg;
  enc_cfg.embed_dim = 4;
  enc_cfg.depths = {1, 1};
  enc_cfg.heads = {1, 2};
  DecoderConfig cfg;
  cfg.depths = {1, 1};
  cfg.num_classes = 2;
  cfg.expansion = 2;
  nn::ParameterStore<double> store(9);
  const auto ew = swin::make_encoder_weights(store, enc_cfg);
  const auto dw = make_decoder_weights(store, cfg, enc_cfg);
  testutil::jitter(store, 9, 0.1);
  const Var<double> vol = Var<double>::leaf(testutil::uniform<double>({1, 4, 4, 4}, 10));

  const auto enc = swin::encode(vol, ew, enc_cfg);
  CHECK(decode(enc, enc.bottleneck, dw, cfg).shape() == Shape{2, 4, 4, 4});

  SUBCASE("jacobian spot checks") {
    std::vector<Var<double>> leaves{vol};
    for (const auto& [name, p] : store.entries()) {
      if (name.rfind("decoder", 0) == 0) leaves.push_back(p);
    }
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      selftest::GradCheckOptions opts;
      opts.seed = seed;
      opts.max_per_leaf = 6;
      const auto r = selftest::gradcheck(
          [&] {
            const auto e = swin::encode(vol, ew, enc_cfg);
            return decode(e, e.bottleneck, dw, cfg);
          },
          leaves, opts);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
  SUBCASE("zero weights leave only the head bias") {
    zero_all(store, "decoder");
    Var<double>(dw.head_bias).assign(Tensor<double>({2}, std::vector<double>{0.25, -1.5}));
    const Tensor<double> y = decode(enc, enc.bottleneck, dw, cfg).value();
    for (std::size_t i = 0; i < 64; ++i) {
      CHECK(y.data()[i] == 0.25);
      CHECK(y.data()[64 + i] == -1.5);
    }
  }
  SUBCASE("skip shape violations name the stage") {
    auto bad = enc;
    bad.skips[0] = Var<double>::constant(Tensor<double>({4, 3, 2, 2}, 0.0));
    try {
      decode(bad, bad.bottleneck, dw, cfg);
      FAIL("mismatched skip accepted");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("stage 0") != std::string::npos);
    }
  }
  DecoderConfig wrong = cfg;
  wrong.depths = {1, 1, 1};
  CHECK_THROWS_AS(wrong.validate(enc_cfg), ContractError);
  wrong = cfg;
  wrong.kernel = 2;
  CHECK_THROWS_AS(wrong.validate(enc_cfg), ContractError);
}
