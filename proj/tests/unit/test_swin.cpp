#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nnynet/selftest.hpp"
#include "nnynet/swin_encoder.hpp"

using namespace nnynet;
using namespace nnynet::swin;

namespace {

Var<double> tokens(const Shape& s, std::uint64_t seed) { return Var<double>::constant(testutil::uniform<double>(s, seed)); }

}  // namespace

TEST_CASE("window partition and merge") {
  const Var<double> t = tokens({4, 4, 4, 3}, 1);
  const Var<double> w = window_partition(t, {2, 2, 2});
  CHECK(w.shape() == Shape{8, 8, 3});
  CHECK(window_partition(t, {4, 4, 4}).shape() == Shape{1, 64, 3});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Extent3 win{1 + rng() % 3, 1 + rng() % 3, 1 + rng() % 3};
    const Extent3 grid{win[0] * (1 + rng() % 3), win[1] * (1 + rng() % 3), win[2] * (1 + rng() % 3)};
    const Var<double> x = tokens({grid[0], grid[1], grid[2], 2}, seed);
    CHECK(bitwise_equal(window_merge(window_partition(x, win), grid, win).value(), x.value()));
  }
  // the first window holds the tokens of the leading 2x2x2 block
  CHECK(w.value().at(0, 1, 0) == t.value().at(0, 0, 1, 0));
  CHECK(w.value().at(0, 7, 2) == t.value().at(1, 1, 1, 2));
  CHECK_THROWS(window_partition(tokens({3, 4, 4, 1}, 0), {2, 2, 2}));
}

TEST_CASE("cyclic shift") {
  const Var<double> t = tokens({3, 4, 5, 2}, 2);
  CHECK(bitwise_equal(cyclic_shift(t, {0, 0, 0}).value(), t.value()));
  CHECK(bitwise_equal(cyclic_shift(t, {3, 4, 5}).value(), t.value()));
  CHECK(bitwise_equal(inverse_cyclic_shift(cyclic_shift(t, {1, 2, 3}), {1, 2, 3}).value(), t.value()));
  const Var<double> c = tokens({2, 2, 2, 1}, 3);
  CHECK(bitwise_equal(cyclic_shift(cyclic_shift(c, {1, 1, 1}), {1, 1, 1}).value(), c.value()));
  // token (i + offset) lands at i
  CHECK(cyclic_shift(t, {1, 0, 2}).value().at(0, 0, 0, 1) == t.value().at(1, 0, 2, 1));
  CHECK(cyclic_shift(t, {1, 0, 2}).value().at(2, 3, 4, 0) == t.value().at(0, 3, 1, 0));
}

TEST_CASE("relative position index") {
  for (std::size_t m : {1, 2, 3}) {
    const Extent3 win{m, m, m};
    const auto idx = relative_position_index(win, m);
    const std::size_t n = m * m * m, rows = (2 * m - 1) * (2 * m - 1) * (2 * m - 1);
    REQUIRE(idx.size() == n * n);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(idx[i * n + i] == (rows - 1) / 2);
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(idx[i * n + j] < rows);
        // swapping query and key negates the offset
        CHECK(idx[i * n + j] + idx[j * n + i] == rows - 1);
      }
    }
  }
  // window (1, 2, 1) measured against a table for M = 2: offsets along y only
  const auto idx = relative_position_index({1, 2, 1}, 2);
  CHECK(idx == std::vector<std::size_t>{13, 10, 16, 13});
}

TEST_CASE("window plans and masks") {
  const WindowPlan a = plan_window({4, 4, 4}, 2, true);
  CHECK(a.window == Extent3{2, 2, 2});
  CHECK(a.shift == Extent3{1, 1, 1});
  CHECK(a.padded == Extent3{4, 4, 4});
  const WindowPlan b = plan_window({2, 5, 1}, 2, true);
  CHECK(b.window == Extent3{2, 2, 1});
  CHECK(b.shift == Extent3{0, 1, 0});
  CHECK(b.padded == Extent3{2, 6, 1});
  const WindowPlan c = plan_window({4, 4, 4}, 2, false);
  CHECK(c.shift == Extent3{0, 0, 0});
  CHECK_FALSE(attention_mask<double>({4, 4, 4}, {4, 4, 4}, {2, 2, 2}, {0, 0, 0}).has_value());

  const auto mask = attention_mask<double>({4, 4, 4}, {4, 4, 4}, {2, 2, 2}, {1, 1, 1});
  REQUIRE(mask.has_value());
  CHECK(mask->shape() == Shape{8, 8, 8});
  // the first window has no wrapped tokens; the last mixes all eight regions
  const Tensor<double> first = slice(Var<double>::constant(*mask), 0, 0, 1).value();
  for (double v : first.data()) CHECK(v == 0.0);
  std::size_t banned = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(mask->at(7, i, i) == 0.0);
    for (std::size_t j = 0; j < 8; ++j) banned += std::isinf(mask->at(7, i, j)) ? 1 : 0;
  }
  CHECK(banned == 56);
}

TEST_CASE("window attention") {
  nn::ParameterStore<double> store(5);
  const AttentionWeights<double> w = make_attention_weights(store, "a", 4, 2, 2);
  testutil::jitter(store, 5);

  SUBCASE("singleton window returns the projected value") {
    const Var<double> x = tokens({3, 1, 4}, 6);
    const Var<double> out = window_attention<double>(x, w, Var<double>{}, nullptr);
    const Var<double> v = slice(nn::linear(x, w.qkv), 2, 8, 4);
    CHECK(max_abs_diff(out.value(), nn::linear(v, w.proj).value()) < 1e-12);
  }
  SUBCASE("identical tokens give identical outputs") {
    Tensor<double> x = testutil::uniform<double>({1, 1, 4}, 7);
    const Var<double> two = concat<double>({Var<double>::constant(x), Var<double>::constant(x)}, 1);
    const Tensor<double> out = window_attention<double>(two, w, Var<double>{}, nullptr).value();
    for (std::size_t c = 0; c < 4; ++c) CHECK(out.at(0, 0, c) == out.at(0, 1, c));
  }
  SUBCASE("weights sum to one with and without masks") {
    for (bool shifted : {false, true}) {
      for (const Shape& s : {Shape{4, 4, 4, 4}, Shape{5, 3, 2, 4}}) {
        Tensor<double> weights;
        shifted_window_attention(tokens(s, 8), w, 2, shifted, &weights);
        const Shape& ws = weights.shape();
        REQUIRE(ws.size() == 4);
        for (std::size_t h = 0; h < ws[0]; ++h)
          for (std::size_t b = 0; b < ws[1]; ++b)
            for (std::size_t i = 0; i < ws[2]; ++i) {
              double s1 = 0;
              for (std::size_t j = 0; j < ws[3]; ++j) s1 += weights.at(h, b, i, j);
              CHECK(std::abs(s1 - 1.0) < 1e-6);
            }
      }
    }
  }
  SUBCASE("single token grid: W-MSA and SW-MSA coincide") {
    const Var<double> x = tokens({1, 1, 1, 4}, 9);
    CHECK(bitwise_equal(shifted_window_attention(x, w, 2, false).value(),
                        shifted_window_attention(x, w, 2, true).value()));
  }
  SUBCASE("padding never leaks into real tokens") {
    // perturbing nothing but the padded extent is impossible, so compare a
    // 3^3 grid against its embedding in a larger grid whose extra tokens sit
    // in separate windows
    const Var<double> x = tokens({2, 2, 2, 4}, 10);
    Tensor<double> big({4, 2, 2, 4}, 0.0);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t k = 0; k < 2; ++k)
          for (std::size_t c = 0; c < 4; ++c) {
            big.at(i, j, k, c) = x.value().at(i, j, k, c);
            big.at(i + 2, j, k, c) = 100.0 + c;
          }
    const Tensor<double> a = shifted_window_attention(x, w, 2, false).value();
    const Tensor<double> b = shifted_window_attention(Var<double>::constant(big), w, 2, false).value();
    CHECK(max_abs_diff(a, slice(Var<double>::constant(b), 0, 0, 2).value()) < 1e-12);
  }
}

TEST_CASE("dense attention equivalence in double precision") {
  nn::ParameterStore<float> fstore(11);
  const AttentionWeights<float> w = make_attention_weights(fstore, "a", 8, 2, 4);
  nn::ParameterStore<double> dstore(11);
  const AttentionWeights<double> wd = make_attention_weights(dstore, "a", 8, 2, 4);
  // the stores agree parameter by parameter; copy the rounded float values
  for (std::size_t i = 0; i < fstore.entries().size(); ++i) {
    const auto& fv = fstore.entries()[i].second.value();
    Tensor<double> dv = dstore.entries()[i].second.value();
    for (std::size_t k = 0; k < fv.size(); ++k) {
      CHECK(static_cast<float>(dv.data()[k]) == fv.data()[k]);
      dv.data()[k] = fv.data()[k];
    }
    Var<double>(dstore.entries()[i].second).assign(std::move(dv));
  }
  const Tensor<double> x = testutil::uniform<double>({4, 4, 4, 8}, 12);
  const Tensor<double> got = shifted_window_attention(Var<double>::constant(x), wd, 4, false).value();
  const Tensor<double> ref = selftest::oracle::dense_attention(x, w, 4);
  CHECK(max_abs_diff(got, ref) < 1e-10);
}

TEST_CASE("blocks and downsampling") {
  nn::ParameterStore<double> store(13);
  SwinBlockWeights<double> b1 = make_block_weights(store, "b1", 4, 2, 2, 4.0);
  SwinBlockWeights<double> b2 = make_block_weights(store, "b2", 4, 2, 2, 4.0);
  const Var<double> x = tokens({4, 4, 2, 4}, 14);
  for (auto* b : {&b1, &b2}) {
    b->attn.proj.weight.assign(Tensor<double>(b->attn.proj.weight.shape(), 0.0));
    b->attn.proj.bias.assign(Tensor<double>(b->attn.proj.bias.shape(), 0.0));
    b->mlp.fc2.weight.assign(Tensor<double>(b->mlp.fc2.weight.shape(), 0.0));
    b->mlp.fc2.bias.assign(Tensor<double>(b->mlp.fc2.bias.shape(), 0.0));
  }
  CHECK(bitwise_equal(swin_block_pair(x, b1, b2, 2).value(), x.value()));

  const nn::LinearWeights<double> d = nn::make_linear(store, "down", 32, 8, false);
  CHECK(downsample(tokens({2, 2, 2, 4}, 15), d).shape() == Shape{1, 1, 1, 8});
  const Var<double> ones = Var<double>::constant(Tensor<double>({4, 2, 2, 4}, 0.5));
  const Tensor<double> out = downsample(ones, d).value();
  const Tensor<double> row = nn::linear(Var<double>::constant(Tensor<double>({1, 32}, 0.5)), d).value();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(out.at(i, 0, 0, c) - row.at(0, c)) < 1e-14);

  // 16 -> 8 -> 4 -> 2 with channels doubling
  Var<double> t = tokens({16, 16, 16, 2}, 16);
  std::size_t ch = 2, ext = 16;
  for (int stage = 0; stage < 3; ++stage) {
    t = downsample(t, nn::make_linear(store, "d" + std::to_string(stage), 8 * ch, 2 * ch, false));
    ch *= 2;
    ext /= 2;
    CHECK(t.shape() == Shape{ext, ext, ext, ch});
  }
  CHECK_THROWS(downsample(tokens({3, 2, 2, 4}, 0), d));
}

TEST_CASE("patch embedding and the full encoder") {
  nn::ParameterStore<double> store(17);
  const nn::LinearWeights<double> pw = nn::make_linear(store, "pe", 8, 4);
  CHECK(patch_embed(tokens({1, 4, 4, 4}, 18), pw, {2, 2, 2}).shape() == Shape{2, 2, 2, 4});
  const nn::LinearWeights<double> p1 = nn::make_linear(store, "p1", 2, 3);
  const Var<double> v = tokens({2, 3, 1, 2}, 19);
  const Tensor<double> e = patch_embed(v, p1, {1, 1, 1}).value();
  CHECK(e.shape() == Shape{3, 1, 2, 3});
  for (std::size_t c = 0; c < 3; ++c) {
    const double want = v.value().at(0, 1, 0, 1) * p1.weight.value().at(0, c) +
                        v.value().at(1, 1, 0, 1) * p1.weight.value().at(1, c) + p1.bias.value().at(c);
    CHECK(std::abs(e.at(1, 0, 1, c) - want) < 1e-14);
  }
  // identity-padded projection on constant input gives constant tokens
  nn::LinearWeights<double> id = nn::make_linear(store, "id", 8, 4);
  Tensor<double> iw({8, 4}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) iw.at(i, i) = 1.0;
  id.weight.assign(iw);
  const Tensor<double> ce = patch_embed(Var<double>::constant(Tensor<double>({1, 4, 2, 2}, 3.0)), id, {2, 2, 2}).value();
  for (double x : ce.data()) CHECK(x == 3.0);
  CHECK_THROWS(patch_embed(tokens({1, 3, 4, 4}, 0), pw, {2, 2, 2}));

  SwinConfig cfg;
  cfg.embed_dim = 4;
  cfg.depths = {1, 1, 1};
  cfg.heads = {1, 2, 2};
  nn::ParameterStore<double> es(20);
  const auto ew = make_encoder_weights(es, cfg);
  const EncoderOutput<double> out = encode(tokens({1, 16, 16, 16}, 21), ew, cfg);
  CHECK(out.bottleneck.shape() == Shape{16, 2, 2, 2});
  REQUIRE(out.skips.size() == 2);
  CHECK(out.skips[0].shape() == Shape{4, 8, 8, 8});
  CHECK(out.skips[1].shape() == Shape{8, 4, 4, 4});

  SwinConfig bad = cfg;
  bad.heads = {3, 2, 2};
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.heads = {1, 2};
  CHECK_THROWS(bad.validate());
}
