#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "nnynet/fusion.hpp"
#include "nnynet/loss.hpp"
#include "nnynet/next_decoder.hpp"
#include "nnynet/selftest.hpp"

namespace nnynet::selftest {

double relative_error(double analytic, double numeric) {
  const double den = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
  return std::abs(analytic - numeric) / den;
}

namespace {

Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> nd(0.0, stddev);
  Tensor<double> t(shape);
  for (double& v : t.data()) v = nd(rng);
  return t;
}

double project(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace

GradCheckResult gradcheck(const std::function<Var<double>()>& f, const std::vector<Var<double>>& leaves,
                          const GradCheckOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  const Var<double> y = f();
  // Unit-norm projection keeps the scalar O(1) so round-off in the
  // difference quotient stays well below the relative-error floor.
  Tensor<double> r = random_tensor(y.shape(), rng);
  const double norm = std::sqrt(project(r, r));
  for (double& v : r.data()) v /= norm;
  const GradientMap<double> grads = backward(sum(mul(y, Var<double>::constant(r))));

  GradCheckResult res;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Var<double> leaf = leaves[li];
    const Tensor<double> g = grads.of(leaf);
    std::vector<std::size_t> coords(leaf.value().size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > opts.max_per_leaf) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_per_leaf);
    }
    const Tensor<double> base = leaf.value();
    for (std::size_t idx : coords) {
      auto eval = [&](double delta) {
        Tensor<double> v = base;
        v[idx] += delta;
        leaf.assign(std::move(v));
        NoGradGuard ng;
        return project(f().value(), r);
      };
      const double numeric = (eval(opts.h) - eval(-opts.h)) / (2.0 * opts.h);
      leaf.assign(base);
      const double e = relative_error(g[idx], numeric);
      ++res.checked;
      if (e > res.max_rel_error || std::isnan(e)) {
        res.max_rel_error = std::isnan(e) ? std::numeric_limits<double>::infinity() : e;
        std::ostringstream os;
        os << "leaf " << li << " [" << idx << "] analytic " << g[idx] << " numeric " << numeric;
        res.worst = os.str();
      }
    }
  }
  return res;
}

namespace {

struct GradCase {
  std::string name;
  // Builds inputs for one seed; fills the leaves and returns the function.
  std::function<std::function<Var<double>()>(std::uint64_t seed, std::vector<Var<double>>& leaves)> build;
};

// Perturbs every stored parameter so zero biases, unit gains and a zero
// gate do not hide gradient paths.
void jitter(nn::ParameterStore<double>& store, std::mt19937_64& rng, std::vector<Var<double>>& leaves) {
  std::normal_distribution<double> nd(0.0, 0.3);
  for (const auto& [name, v] : store.entries()) {
    Var<double> p = v;
    Tensor<double> t = p.value();
    for (double& x : t.data()) x += nd(rng);
    p.assign(std::move(t));
    leaves.push_back(p);
  }
}

Var<double> input(const Shape& shape, std::mt19937_64& rng, std::vector<Var<double>>& leaves, double sd = 1.0) {
  Var<double> v = Var<double>::leaf(random_tensor(shape, rng, sd));
  leaves.push_back(v);
  return v;
}

Tensor<double> random_one_hot(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  Tensor<double> g({n, k});
  std::uniform_int_distribution<std::size_t> ud(0, k - 1);
  for (std::size_t i = 0; i < n; ++i) g.at(i, ud(rng)) = 1.0;
  return g;
}

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cs;
  using Fn = std::function<Var<double>()>;
  using Leaves = std::vector<Var<double>>;

  cs.push_back({"layer_norm", [](std::uint64_t seed, Leaves& l) -> Fn {
                  std::mt19937_64 rng(seed);
                  auto store = std::make_shared<nn::ParameterStore<double>>(seed);
                  const auto w = nn::make_layer_norm(*store, "ln", 6);
                  jitter(*store, rng, l);
                  const Var<double> x = input({4, 6}, rng, l, 2.0);
                  return [store, w, x] { return nn::layer_norm(x, w); };
                }});
  cs.push_back({"gelu", [](std::uint64_t seed, Leaves& l) -> Fn {
                  std::mt19937_64 rng(seed);
                  const Var<double> x = input({5, 6}, rng, l, 2.0);
                  return [x] { return gelu(x); };
                }});
  cs.push_back({"mlp", [](std::uint64_t seed, Leaves& l) -> Fn {
                  std::mt19937_64 rng(seed);
                  auto store = std::make_shared<nn::ParameterStore<double>>(seed);
                  const auto w = nn::make_mlp(*store, "mlp", 4, 8);
                  jitter(*store, rng, l);
                  const Var<double> x = input({3, 4}, rng, l);
                  return [store, w, x] { return nn::mlp(x, w); };
                }});
  auto attention_case = [](Shape grid, bool shifted) {
    return [grid, shifted](std::uint64_t seed, Leaves& l) -> Fn {
      std::mt19937_64 rng(seed);
      auto store = std::make_shared<nn::ParameterStore<double>>(seed);
      const auto w = swin::make_attention_weights(*store, "attn", 4, 2, 2);
      jitter(*store, rng, l);
      const Var<double> x = input(grid, rng, l);
      return [store, w, x, shifted] { return swin::shifted_window_attention(x, w, 2, shifted); };
    };
  };
  cs.push_back({"w_msa", attention_case({4, 4, 4, 4}, false)});
  cs.push_back({"sw_msa", attention_case({4, 4, 4, 4}, true)});
  cs.push_back({"sw_msa_padded", attention_case({5, 4, 3, 4}, true)});
  cs.push_back({"swin_block_pair", [](std::uint64_t seed, Leaves& l) -> Fn {
                  std::mt19937_64 rng(seed);
                  auto store = std::make_shared<nn::ParameterStore<double>>(seed);
                  const auto a = swin::make_block_weights(*store, "b0", 4, 2, 2, 2.0);
                  const auto b = swin::make_block_weights(*store, "b1", 4, 2, 2, 2.0);
                  jitter(*store, rng, l);
                  const Var<double> x = input({4, 4, 2, 4}, rng, l);
                  return [store, a, b, x] { return swin::swin_block_pair(x, a, b, 2); };
                }});
  cs.push_back({"patch_embed_downsample", [](std::uint64_t seed, Leaves& l) -> Fn {
                  std::mt19937_64 rng(seed);
                  auto store = std::make_shared<nn::ParameterStore<double>>(seed);
                  const auto pe = nn::make_linear(*store, "pe", 8, 4);
                  const auto ds = nn::make_linear(*store, "ds", 32, 8, false);
                  jitter(*store, rng, l);
                  const Var<double> x = input({1, 4, 4, 4}, rng, l);
                  return [store, pe, ds, x] {
                    return swin::downsample(swin::patch_embed(x, pe, {2, 2, 2}), ds);
                  };
                }});
  cs.push_back({"depthwise_conv", [](std::uint64_t seed, Leaves& l) -> Fn {
                  std::mt19937_64 rng(seed);
                  const Var<double> x = input({3, 4, 3, 4}, rng, l);
                  const Var<double> w = input({3, 1, 3, 3, 3}, rng, l);
                  const Var<double> b = input({3}, rng, l);
                  return [x, w, b] {
                    Conv3dOptions o;
                    o.groups = 3;
                    o.padding = {1, 1, 1};
                    return conv3d(x, w, b, o);
                  };
                }});
  cs.push_back({"pointwise_conv", [](std::uint64_t seed, Leaves& l) -> Fn {
                  std::mt19937_64 rng(seed);
                  const Var<double> x = input({4, 3, 2, 3}, rng, l);
                  const Var<double> w = input({5, 4, 1, 1, 1}, rng, l);
                  const Var<double> b = input({5}, rng, l);
                  return [x, w, b] { return conv3d(x, w, b); };
                }});
  cs.push_back({"transposed_conv", [](std::uint64_t seed, Leaves& l) -> Fn {
                  std::mt19937_64 rng(seed);
                  const std::size_t stride = 1 + seed % 2, f = 1 + (seed / 2) % 3;
                  const Var<double> x = input({2, 3, 2, 3}, rng, l);
                  const Var<double> w = input({3, 2, f, f, f}, rng, l);
                  const Var<double> b = input({3}, rng, l);
                  return [x, w, b, stride] { return transposed_conv3d(x, w, b, stride); };
                }});
  cs.push_back({"next_block", [](std::uint64_t seed, Leaves& l) -> Fn {
                  std::mt19937_64 rng(seed);
                  auto store = std::make_shared<nn::ParameterStore<double>>(seed);
                  const auto w = decoder::make_next_block_weights(*store, "nb", 4, 3, 2);
                  jitter(*store, rng, l);
                  const Var<double> x = input({4, 3, 3, 2}, rng, l);
                  return [store, w, x] { return decoder::next_block(x, w); };
                }});
  auto fusion_case = [](fusion::FusionMode mode) {
    return [mode](std::uint64_t seed, Leaves& l) -> Fn {
      std::mt19937_64 rng(seed);
      auto store = std::make_shared<nn::ParameterStore<double>>(seed);
      fusion::FusionConfig cfg;
      cfg.mode = mode;
      const auto w = fusion::make_fusion_weights(*store, cfg, 8, 5);
      jitter(*store, rng, l);
      const Var<double> fmap = input({8, 2, 2, 2}, rng, l);
      const Var<double> tab = input({5}, rng, l);
      return [store, w, fmap, tab] { return fusion::fuse(fmap, tab, w); };
    };
  };
  cs.push_back({"fusion_add", fusion_case(fusion::FusionMode::add)});
  cs.push_back({"fusion_concat", fusion_case(fusion::FusionMode::concat)});
  cs.push_back({"fusion_cross_attention", fusion_case(fusion::FusionMode::cross_attention)});
  auto loss_case = [](int which) {
    return [which](std::uint64_t seed, Leaves& l) -> Fn {
      std::mt19937_64 rng(seed);
      const Var<double> logits = input({7, 3}, rng, l, 1.5);
      const Tensor<double> g = random_one_hot(7, 3, rng);
      std::uniform_real_distribution<double> ud(0.25, 2.0);
      const std::vector<double> alpha{ud(rng), ud(rng), ud(rng)};
      return [logits, g, alpha, which] {
        const Var<double> s = softmax(logits, 1);
        switch (which) {
          case 0: return loss::ce_loss(s, g);
          case 1: return loss::dice_loss(s, g, 1e-5);
          case 2: return loss::focal_loss(s, g, 2.0, alpha);
          default: return loss::total_loss(s, g, loss::LossConfig{});
        }
      };
    };
  };
  cs.push_back({"ce_loss", loss_case(0)});
  cs.push_back({"dice_loss", loss_case(1)});
  cs.push_back({"focal_loss", loss_case(2)});
  cs.push_back({"total_loss", loss_case(3)});
  return cs;
}

}  // namespace

CriterionResult gradient_suite(std::size_t seeds) {
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult res{"gradient_suite", true, "", 0.0};
  std::ostringstream os;
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  for (const GradCase& c : gradient_cases()) {
    double case_worst = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
      std::vector<Var<double>> leaves;
      const auto f = c.build(1000 + s, leaves);
      GradCheckOptions opts;
      opts.seed = 77 + s;
      const GradCheckResult g = gradcheck(f, leaves, opts);
      checked += g.checked;
      if (g.max_rel_error > case_worst) case_worst = g.max_rel_error;
      if (g.max_rel_error > worst) {
        worst = g.max_rel_error;
        worst_name = c.name + " seed " + std::to_string(s) + ": " + g.worst;
      }
    }
    if (!(case_worst < 1e-4)) res.passed = false;
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (res.seconds >= 300.0) res.passed = false;
  os << gradient_cases().size() << " ops x " << seeds << " seeds, " << checked << " coordinates, max rel err " << worst
     << " (" << worst_name << "), limit 1e-4";
  res.detail = os.str();
  return res;
}

}  // namespace nnynet::selftest
