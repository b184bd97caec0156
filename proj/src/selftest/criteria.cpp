#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "nnynet/inference.hpp"
#include "nnynet/loss.hpp"
#include "nnynet/nrrd_io.hpp"
#include "nnynet/pipeline.hpp"
#include "nnynet/preprocess.hpp"
#include "nnynet/selftest.hpp"

namespace nnynet::selftest {

namespace {

using Clock = std::chrono::steady_clock;

template <typename Fn>
CriterionResult timed(const std::string& name, Fn&& body) {
  const auto t0 = Clock::now();
  CriterionResult r{name, false, "", 0.0};
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> ud(lo, hi);
  Tensor<T> t(shape);
  for (T& v : t.data()) v = static_cast<T>(ud(rng));
  return t;
}

template <typename T>
void jitter_store(nn::ParameterStore<T>& store, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> nd(0.0, sd);
  for (const auto& [name, v] : store.entries()) {
    Var<T> p = v;
    Tensor<T> t = p.value();
    for (T& x : t.data()) x = static_cast<T>(static_cast<double>(x) + nd(rng));
    p.assign(std::move(t));
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << v;
  return os.str();
}

// Small two-stage network used by the determinism and round-trip checks.
NetworkConfig small_network(fusion::FusionMode mode) {
  NetworkConfig cfg;
  cfg.encoder.embed_dim = 8;
  cfg.encoder.depths = {1, 1};
  cfg.encoder.heads = {2, 4};
  cfg.encoder.window = 2;
  cfg.decoder.depths = {1, 1};
  cfg.decoder.num_classes = 3;
  cfg.fusion.mode = mode;
  cfg.tab_features = 4;
  return cfg;
}

}  // namespace

CriterionResult attention_oracle() {
  return timed("attention_oracle", [](CriterionResult& r) {
    float worst = 0.0f;
    const std::size_t trials = 10;
    for (std::size_t s = 0; s < trials; ++s) {
      std::mt19937_64 rng(500 + s);
      nn::ParameterStore<float> store(s);
      const auto w = swin::make_attention_weights(store, "attn", 8, 2, 4);
      jitter_store(store, rng, 0.3);
      const Tensor<float> x = uniform_tensor<float>({4, 4, 4, 8}, rng);
      const Tensor<double> ref = oracle::dense_attention(x.cast<double>(), w, 4);
      for (bool shifted : {false, true}) {
        const Tensor<float> got = swin::shifted_window_attention(Var<float>::constant(x), w, 4, shifted).value();
        for (std::size_t i = 0; i < got.size(); ++i) {
          worst = std::max(worst, static_cast<float>(std::abs(static_cast<double>(got[i]) - ref[i])));
        }
      }
    }
    r.passed = worst < 1e-5f;
    r.detail = std::to_string(trials) + " grids of 4^3 tokens, M=4: max abs diff " + fmt(worst) + " (limit 1e-5)";
  });
}

CriterionResult transposed_conv_oracle() {
  return timed("transposed_conv_oracle", [](CriterionResult& r) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> ext(1, 5), ker(1, 3), ch(1, 3), st(1, 2);
    double worst = 0.0;
    for (int c = 0; c < 50; ++c) {
      const std::size_t cin = ch(rng), cout = ch(rng), stride = st(rng);
      const Shape xs{cin, ext(rng), ext(rng), ext(rng)};
      const Shape ks{cout, cin, ker(rng), ker(rng), ker(rng)};
      const Tensor<float> x = uniform_tensor<float>(xs, rng), k = uniform_tensor<float>(ks, rng);
      const Tensor<float> got =
          transposed_conv3d(Var<float>::constant(x), Var<float>::constant(k), Var<float>(), stride).value();
      const Tensor<double> ref = oracle::transposed_conv(x.cast<double>(), k.cast<double>(), stride);
      if (got.shape() != ref.shape()) throw ShapeError("transposed conv extent " + shape_str(got.shape()));
      for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(double(got[i]) - ref[i]));
    }
    // Delta kernels: a unit tap at offset a reproduces the zero-inserted
    // input shifted by a, exactly.
    bool delta_ok = true;
    for (std::size_t stride : {1, 2}) {
      for (int t = 0; t < 8; ++t) {
        const std::size_t f = 1 + static_cast<std::size_t>(t % 3);
        std::uniform_int_distribution<std::size_t> off(0, f - 1);
        const std::array<std::size_t, 3> a{off(rng), off(rng), off(rng)};
        const Tensor<float> x = uniform_tensor<float>({2, 3, 4, 2}, rng);
        Tensor<float> k({2, 2, f, f, f});
        for (std::size_t c = 0; c < 2; ++c) k.at(c, c, a[0], a[1], a[2]) = 1.0f;
        const Tensor<float> got =
            transposed_conv3d(Var<float>::constant(x), Var<float>::constant(k), Var<float>(), stride).value();
        Tensor<float> want({2, (3 - 1) * stride + f, (4 - 1) * stride + f, (2 - 1) * stride + f});
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j)
              for (std::size_t l = 0; l < 2; ++l)
                want.at(c, i * stride + a[0], j * stride + a[1], l * stride + a[2]) = x.at(c, i, j, l);
        delta_ok = delta_ok && bitwise_equal(got, want);
      }
    }
    r.passed = worst < 1e-6 && delta_ok;
    r.detail = "50 random cases: max abs diff " + fmt(worst) + " (limit 1e-6); delta-kernel identities " +
               (delta_ok ? "exact" : "FAILED");
  });
}

CriterionResult loss_identities() {
  return timed("loss_identities", [](CriterionResult& r) {
    std::mt19937_64 rng(31);
    double focal_gap = 0.0, dice_perfect = 0.0;
    for (int t = 0; t < 50; ++t) {
      const std::size_t n = 1 + rng() % 20, k = 2 + rng() % 3;
      const Tensor<double> logits = uniform_tensor<double>({n, k}, rng, -4.0, 4.0);
      const Var<double> s = softmax(Var<double>::constant(logits), 1);
      Tensor<double> g({n, k});
      for (std::size_t i = 0; i < n; ++i) g.at(i, rng() % k) = 1.0;
      const double ce = loss::ce_loss(s, g).value().item();
      const double fo = loss::focal_loss(s, g, 0.0, std::vector<double>(k, 1.0)).value().item();
      focal_gap = std::max(focal_gap, std::abs(ce - fo));
      const double d = loss::dice_loss(Var<double>::constant(g), g, 0.0).value().item();
      dice_perfect = std::max(dice_perfect, std::abs(d));
    }
    auto single = [](std::vector<double> p, std::vector<double> g) {
      const Shape shape{1, p.size()};
      return std::pair{Var<double>::constant(Tensor<double>(shape, std::move(p))), Tensor<double>(shape, std::move(g))};
    };
    const auto [s1, g1] = single({0.5, 0.5}, {1, 0});
    const auto [s2, g2] = single({0.8, 0.2}, {1, 0});
    const auto [s3, g3] = single({0.9, 0.1}, {1, 0});
    loss::LossConfig all;
    all.dice_smooth = 0.0;
    const double ce = loss::ce_loss(s1, g1).value().item();
    const double dl = loss::dice_loss(s2, g2, 0.0).value().item();
    const double fl = loss::focal_loss(s3, g3, 2.0).value().item();
    const double tl = loss::total_loss(s2, g2, all).value().item();
    const double fixture_err = std::max({std::abs(ce - 0.693147), std::abs(dl - 0.047619), std::abs(fl - 0.00105361)});
    const double total_terms = -std::log(0.8) + (1.0 - 1.6 / 1.68) + 0.04 * -std::log(0.8);
    const double total_err = std::abs(tl - total_terms);
    r.passed = focal_gap <= 1e-9 && dice_perfect == 0.0 && fixture_err <= 1e-6 && total_err <= 1e-9;
    r.detail = "focal(gamma=0) vs CE max gap " + fmt(focal_gap) + " over 50 instances (limit 1e-9); perfect Dice " +
               fmt(dice_perfect) + "; fixtures CE " + std::to_string(ce) + ", Dice " + std::to_string(dl) +
               ", focal " + std::to_string(fl) + ", total " + std::to_string(tl) + " (max err " + fmt(fixture_err) +
               ", limit 1e-6)";
  });
}

namespace {

// Blobs plus salt noise so classes form structures with real boundaries.
Tensor<int> random_label_grid(std::mt19937_64& rng, std::size_t n, int classes) {
  Tensor<int> m({n, n, n});
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int c = 1; c < classes; ++c) {
    const double cx = ud(rng) * n, cy = ud(rng) * n, cz = ud(rng) * n, rad = 1.0 + ud(rng) * n / 3.0;
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t z = 0; z < n; ++z) {
          const double d = std::hypot(x - cx, y - cy, z - cz);
          if (d < rad) m.at(x, y, z) = c;
        }
  }
  const double salt = ud(rng) * 0.2;
  for (int& v : m.data()) {
    if (ud(rng) < salt) v = static_cast<int>(rng() % static_cast<unsigned>(classes));
  }
  return m;
}

bool same_cell(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

}  // namespace

CriterionResult metric_oracle() {
  return timed("metric_oracle", [](CriterionResult& r) {
    std::mt19937_64 rng(8);
    std::size_t mismatches = 0, cells = 0;
    double iou_gap = 0.0;
    std::string first;
    for (int t = 0; t < 100; ++t) {
      const Tensor<int> pred = random_label_grid(rng, 8, 3), truth = random_label_grid(rng, 8, 3);
      const metrics::Spacing sp{0.5 + (rng() % 4) * 0.25, 1.0, 0.5 + (rng() % 3) * 0.5};
      const auto got = metrics::report(pred, truth, 3, sp);
      const auto want = oracle::brute_report(pred, truth, 3, sp);
      for (std::size_t i = 0; i < want.rows.size(); ++i) {
        const auto& a = got.rows[i];
        const auto& b = want.rows[i];
        const double ga[] = {a.dice, a.miou, a.hd95.defined ? a.hd95.mm : NAN, a.accuracy, a.recall, a.precision};
        const double gb[] = {b.dice, b.miou, b.hd95.defined ? b.hd95.mm : NAN, b.accuracy, b.recall, b.precision};
        for (int c = 0; c < 6; ++c) {
          ++cells;
          if (!same_cell(ga[c], gb[c]) || a.name != b.name) {
            if (mismatches++ == 0) {
              first = "case " + std::to_string(t) + " row " + a.name + " col " + std::to_string(c) + ": " +
                      std::to_string(ga[c]) + " vs " + std::to_string(gb[c]);
            }
          }
        }
        if (i + 1 < want.rows.size()) iou_gap = std::max(iou_gap, std::abs(a.miou - a.dice / (2.0 - a.dice)));
      }
    }
    std::size_t hd_mismatch = 0;
    for (int t = 0; t < 100; ++t) {
      std::vector<metrics::Voxel> x(1 + rng() % 30), y(1 + rng() % 30);
      for (auto& p : x) p = {long(rng() % 10), long(rng() % 10), long(rng() % 10)};
      for (auto& p : y) p = {long(rng() % 10), long(rng() % 10), long(rng() % 10)};
      const metrics::Spacing sp{0.7, 1.3, 2.1};
      if (metrics::hd95(x, y, sp).mm != oracle::hd95_all_pairs(x, y, sp)) ++hd_mismatch;
    }
    r.passed = mismatches == 0 && hd_mismatch == 0 && iou_gap <= 1e-12;
    r.detail = std::to_string(cells) + " report cells over 100 random 8^3 pairs, " + std::to_string(mismatches) +
               " mismatches" + (first.empty() ? "" : " (" + first + ")") + "; HD95 vs all-pairs on 100 sets <= 30: " +
               std::to_string(hd_mismatch) + " mismatches; IoU identity gap " + fmt(iou_gap) + " (limit 1e-12)";
  });
}

CriterionResult structural_roundtrips() {
  return timed("structural_roundtrips", [](CriterionResult& r) {
    std::mt19937_64 rng(99);
    std::vector<std::string> failed;
    auto check = [&](bool ok, const std::string& what) {
      if (!ok) failed.push_back(what);
    };

    for (int t = 0; t < 10; ++t) {
      const swin::Extent3 win{1 + rng() % 3, 1 + rng() % 3, 1 + rng() % 3};
      const swin::Extent3 grid{win[0] * (1 + rng() % 3), win[1] * (1 + rng() % 3), win[2] * (1 + rng() % 3)};
      const Tensor<float> x = uniform_tensor<float>({grid[0], grid[1], grid[2], 3}, rng);
      const Var<float> v = Var<float>::constant(x);
      check(bitwise_equal(swin::window_merge(swin::window_partition(v, win), grid, win).value(), x),
            "window partition/merge");
      const swin::Extent3 off{rng() % 5, rng() % 5, rng() % 5};
      check(bitwise_equal(swin::inverse_cyclic_shift(swin::cyclic_shift(v, off), off).value(), x),
            "cyclic shift/inverse");
    }

    for (int t = 0; t < 10; ++t) {
      const Shape s{6 + rng() % 6, 6 + rng() % 6, 6 + rng() % 6};
      Volume v;
      v.grid = Tensor<float>(s, -1024.0f);
      v.spacing = {0.5, 1.0, 2.0};
      v.origin = {-10.0, 4.0, 0.25};
      LabelMask m;
      m.grid = Tensor<int>(s, 0);
      m.spacing = v.spacing;
      m.origin = v.origin;
      std::uniform_real_distribution<float> hu(-900.0f, 400.0f);
      for (std::size_t x = 2; x < s[0] - 2; ++x)
        for (std::size_t y = 3; y < s[1] - 1; ++y)
          for (std::size_t z = 1; z < s[2] - 3; ++z) {
            v.grid.at(x, y, z) = hu(rng);
            m.grid.at(x, y, z) = static_cast<int>(rng() % 3);
          }
      preprocess::PreprocessConfig pc;
      pc.crop_margin = rng() % 2;
      const auto cr = preprocess::crop_foreground(v, m, pc);
      const Volume uv = preprocess::uncrop(cr.volume, cr.box, -1024.0f);
      const LabelMask um = preprocess::uncrop(cr.mask, cr.box, 0);
      check(bitwise_equal(uv.grid, v.grid) && uv.origin == v.origin && uv.spacing == v.spacing, "crop/uncrop volume");
      check(bitwise_equal(um.grid, m.grid) && um.origin == m.origin, "crop/uncrop mask");

      const Volume pv = io::parse_nrrd(io::write_nrrd(v));
      check(bitwise_equal(pv.grid, v.grid) && pv.spacing == v.spacing && pv.origin == v.origin, "NRRD volume");
      LabelMask wide = m;
      if (t % 2) wide.grid[0] = 300;
      const LabelMask pm = io::parse_label_nrrd(io::write_nrrd(wide));
      check(bitwise_equal(pm.grid, wide.grid) && pm.spacing == wide.spacing && pm.origin == wide.origin, "NRRD mask");
    }

    pipeline::PipelineConfig cfg = pipeline::PipelineConfig::desk();
    cfg.network = small_network(fusion::FusionMode::cross_attention);
    cfg.network.fusion.gate_init = 0.5;
    SegmentationNetwork<float> net(cfg.network, 5);
    std::mt19937_64 state(123);
    state.discard(17);
    const pipeline::Checkpoint ck = pipeline::make_checkpoint(
        net, cfg, 42, state, {{"stats.x", uniform_tensor<float>({3}, rng)}, {"stats.y", Tensor<float>({0})}});
    const auto path = std::filesystem::temp_directory_path() / ("nnynet_selftest_" + std::to_string(rng()) + ".ckpt");
    pipeline::save_checkpoint(path.string(), ck);
    const pipeline::Checkpoint back = pipeline::load_checkpoint(path.string());
    std::filesystem::remove(path);
    bool same = back.config == ck.config && back.step == ck.step && back.rng_state == ck.rng_state &&
                back.parameters.size() == ck.parameters.size() && back.buffers.size() == ck.buffers.size();
    for (std::size_t i = 0; same && i < ck.parameters.size(); ++i) {
      same = back.parameters[i].name == ck.parameters[i].name &&
             bitwise_equal(back.parameters[i].value, ck.parameters[i].value);
    }
    for (std::size_t i = 0; same && i < ck.buffers.size(); ++i) {
      same = back.buffers[i].name == ck.buffers[i].name && bitwise_equal(back.buffers[i].value, ck.buffers[i].value);
    }
    SegmentationNetwork<float> other(cfg.network, 6);
    pipeline::restore_parameters(other, back);
    for (std::size_t i = 0; same && i < other.parameters().entries().size(); ++i) {
      same = bitwise_equal(other.parameters().entries()[i].second.value(),
                           net.parameters().entries()[i].second.value());
    }
    check(same && pipeline::serialize_checkpoint(back) == pipeline::serialize_checkpoint(ck), "checkpoint");

    r.passed = failed.empty();
    std::string list;
    for (const auto& f : failed) list += (list.empty() ? "" : ", ") + f;
    r.detail = r.passed ? "partition/merge, shift/inverse, crop/uncrop, NRRD volume+mask, checkpoint: all bitwise"
                        : "failed: " + list;
  });
}

CriterionResult sliding_window_determinism() {
  return timed("sliding_window_determinism", [](CriterionResult& r) {
    std::mt19937_64 rng(4242);
    const NetworkConfig nc = small_network(fusion::FusionMode::cross_attention);
    SegmentationNetwork<double> net(nc, 11);
    jitter_store(net.parameters(), rng, 0.05);
    const Tensor<double> tab = uniform_tensor<double>({nc.tab_features}, rng);
    const inference::WindowModel<double> model = [&](const Tensor<double>& patch, std::size_t) {
      return net.predict(patch, tab);
    };
    inference::SlidingWindowPlan plan;
    plan.patch = {8, 8, 8};
    plan.overlap = 0.5;
    const Tensor<double> vol = uniform_tensor<double>({14, 12, 8}, rng);
    const std::size_t nwin = inference::plan_windows(vol.shape(), plan).size();
    const Tensor<double> base = inference::sliding_predict(vol, model, plan);

    bool orders_ok = true;
    std::vector<std::size_t> order(nwin);
    std::iota(order.begin(), order.end(), 0);
    for (int t = 0; t < 4; ++t) {
      inference::SlidingOptions opt;
      if (t == 0) {
        opt.order.assign(order.rbegin(), order.rend());
      } else {
        std::shuffle(order.begin(), order.end(), rng);
        opt.order = order;
      }
      opt.threads = static_cast<std::size_t>(1 + t);
      orders_ok = orders_ok && bitwise_equal(inference::sliding_predict(vol, model, plan, opt), base);
    }

    const Tensor<double> one = uniform_tensor<double>({8, 8, 8}, rng);
    const bool single_ok = bitwise_equal(inference::sliding_predict(one, model, plan), net.predict(one, tab));
    r.passed = orders_ok && single_ok;
    r.detail = std::to_string(nwin) + " windows, reversed/shuffled orders on 1-4 threads: " +
               (orders_ok ? "bitwise identical" : "DIFFER") + "; single window vs direct forward: " +
               (single_ok ? "bitwise identical" : "DIFFER");
  });
}

CriterionResult end_to_end_overfit(std::uint64_t seed) {
  return timed("end_to_end_overfit", [seed](CriterionResult& r) {
    pipeline::PipelineConfig cfg = pipeline::PipelineConfig::desk();
    cfg.seed = seed;
    cfg.steps = 300;
    const auto cases = pipeline::load_cases(cfg);
    const auto stats = pipeline::fit_dataset_stats(cases, cfg);
    double best = 0.0;
    std::size_t reached = 0;
    pipeline::TrainHooks hooks;
    hooks.on_step = [&](std::size_t step, double, const SegmentationNetwork<float>& net) {
      if (step % 10 != 0 && step != cfg.steps) return true;
      const double d = pipeline::evaluate(cfg, net, stats, cases).aggregate.total().dice;
      best = std::max(best, d);
      if (d >= 0.95) {
        reached = step;
        return false;
      }
      return true;
    };
    const auto t0 = Clock::now();
    const auto res = pipeline::train(cfg, cases, hooks);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    r.passed = reached > 0 && reached <= 300 && secs < 900.0;
    r.detail = "one synthetic 16^3 case, cross-attention fusion: " +
               (reached ? "foreground Dice >= 0.95 at step " + std::to_string(reached)
                        : "best Dice " + fmt(best) + " after " + std::to_string(res.steps) + " steps") +
               ", " + fmt(secs) + " s (limits: 300 steps, 900 s)";
  });
}

CriterionResult fusion_ablation_harness() {
  return timed("fusion_ablation_harness", [](CriterionResult& r) {
    pipeline::PipelineConfig cfg = pipeline::PipelineConfig::desk();
    cfg.seed = 3;
    cfg.steps = 60;
    const auto rows = pipeline::ablate_fusion(cfg);
    bool complete = rows.size() == 3;
    const fusion::FusionMode modes[] = {fusion::FusionMode::add, fusion::FusionMode::concat,
                                        fusion::FusionMode::cross_attention};
    for (std::size_t i = 0; complete && i < rows.size(); ++i) {
      const auto& t = rows[i].total;
      auto unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
      complete = rows[i].mode == modes[i] && unit(t.dice) && unit(t.miou) && unit(t.accuracy) && unit(t.recall) &&
                 unit(t.precision) && t.hd95.defined && std::isfinite(t.hd95.mm) && std::isfinite(rows[i].final_loss);
    }

    // Non-fusion parameters agree bitwise across modes.
    std::vector<std::unique_ptr<SegmentationNetwork<float>>> nets;
    for (auto m : {fusion::FusionMode::none, fusion::FusionMode::add, fusion::FusionMode::concat,
                   fusion::FusionMode::cross_attention}) {
      NetworkConfig nc = cfg.network;
      nc.fusion.mode = m;
      nets.push_back(std::make_unique<SegmentationNetwork<float>>(nc, cfg.seed));
    }
    auto shared = [](const SegmentationNetwork<float>& n) {
      std::vector<std::pair<std::string, const Tensor<float>*>> out;
      for (const auto& [name, v] : n.parameters().entries()) {
        if (name.rfind("fusion.", 0) != 0) out.emplace_back(name, &v.value());
      }
      return out;
    };
    const auto ref = shared(*nets[0]);
    bool init_ok = !ref.empty();
    for (std::size_t k = 1; k < nets.size(); ++k) {
      const auto other = shared(*nets[k]);
      init_ok = init_ok && other.size() == ref.size();
      for (std::size_t i = 0; init_ok && i < ref.size(); ++i) {
        init_ok = ref[i].first == other[i].first && bitwise_equal(*ref[i].second, *other[i].second);
      }
    }

    // Gate-zero identity on the bottleneck and through to the logits.
    std::mt19937_64 rng(17);
    const auto x = Var<float>::constant(uniform_tensor<float>({1, 16, 16, 16}, rng));
    const auto tab = Var<float>::constant(uniform_tensor<float>({cfg.network.tab_features}, rng));
    const auto tr = nets[3]->trace(x, tab);
    const auto plain = nets[0]->trace(x, tab);
    const bool gate_ok = nets[3]->fusion_weights().gate.value().item() == 0.0f &&
                         bitwise_equal(tr.fused.value(), tr.encoder.bottleneck.value()) &&
                         bitwise_equal(tr.logits.value(), plain.logits.value());

    r.passed = complete && init_ok && gate_ok;
    std::string table = pipeline::ablation_table(rows, ' ');
    for (char& c : table) {
      if (c == '\n') c = ';';
    }
    r.detail = std::string(complete ? "3 complete rows" : "INCOMPLETE rows") + "; non-fusion init " +
               (init_ok ? "identical" : "DIFFERS") + "; gate-zero identity " + (gate_ok ? "bitwise" : "BROKEN") +
               " | " + table;
  });
}

CriterionResult postprocessing_fixtures() {
  return timed("postprocessing_fixtures", [](CriterionResult& r) {
    inference::ComponentPolicy pol;
    pol.min_size = 2;

    // Island of label 2 inside a block of label 1; a second, larger label-2
    // component keeps the island from being the last one of its label.
    Tensor<int> island({5, 5, 8}, 1);
    for (std::size_t x = 0; x < 5; ++x)
      for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t z = 5; z < 8; ++z) island.at(x, y, z) = 2;
    island.at(2, 2, 2) = 2;
    Tensor<int> island_want = island;
    island_want.at(2, 2, 2) = 1;
    const Tensor<int> island_got = inference::merge_small(island, pol);
    const bool island_ok = island_got == island_want && inference::merge_small(island_got, pol) == island_got;

    // 13 neighbours of label 1 and 13 of label 3 around a label-2 voxel.
    Tensor<int> tie({3, 3, 6}, 2);
    for (std::size_t x = 0; x < 3; ++x)
      for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t z = 0; z < 3; ++z) {
          const bool low = x < 1 || (x == 1 && (y < 1 || (y == 1 && z < 1)));
          tie.at(x, y, z) = low ? 1 : 3;
        }
    tie.at(1, 1, 1) = 2;
    Tensor<int> tie_want = tie;
    tie_want.at(1, 1, 1) = 1;
    const Tensor<int> tie_got = inference::merge_small(tie, pol);
    const bool tie_ok = tie_got == tie_want && inference::merge_small(tie_got, pol) == tie_got;

    std::mt19937_64 rng(50);
    std::size_t violations = 0;
    for (int t = 0; t < 50; ++t) {
      const Tensor<int> m = random_label_grid(rng, 8, 2 + t % 4);
      inference::ComponentPolicy p;
      p.connectivity = t % 2 ? 6 : 26;
      p.min_size = 1 + rng() % 12;
      const Tensor<int> out = inference::merge_small(m, p);
      const std::set<int> before(m.data().begin(), m.data().end()), after(out.data().begin(), out.data().end());
      for (int v : after) violations += before.count(v) == 0;
    }
    r.passed = island_ok && tie_ok && violations == 0;
    r.detail = std::string("1-voxel island -> label 1: ") + (island_ok ? "ok" : "FAILED") +
               "; 13/13 tie -> label 1: " + (tie_ok ? "ok" : "FAILED") + "; new labels on 50 random masks: " +
               std::to_string(violations);
  });
}

std::vector<CriterionResult> run_all(bool include_overfit, const std::function<void(const CriterionResult&)>& on_result) {
  std::vector<std::function<CriterionResult()>> checks{
      [] { return gradient_suite(); },        attention_oracle,        transposed_conv_oracle,
      loss_identities,                        metric_oracle,           structural_roundtrips,
      sliding_window_determinism,
  };
  if (include_overfit) checks.push_back([] { return end_to_end_overfit(); });
  checks.push_back(fusion_ablation_harness);
  checks.push_back(postprocessing_fixtures);
  std::vector<CriterionResult> out;
  for (const auto& c : checks) {
    out.push_back(c());
    if (on_result) on_result(out.back());
  }
  return out;
}

std::string format_result(const CriterionResult& r) {
  std::ostringstream os;
  os << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << std::fixed << std::setprecision(1) << r.seconds
     << " s): " << r.detail;
  return os.str();
}

}  // namespace nnynet::selftest
