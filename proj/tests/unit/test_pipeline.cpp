#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "nnynet/inference.hpp"
#include "nnynet/pipeline.hpp"
#include "nnynet/synthetic.hpp"

using namespace nnynet;
using namespace nnynet::pipeline;

namespace {

PipelineConfig quick(std::size_t steps = 3) {
  PipelineConfig cfg = PipelineConfig::desk();
  cfg.steps = steps;
  return cfg;
}

}  // namespace

TEST_CASE("config JSON") {
  const PipelineConfig desk = PipelineConfig::desk();
  CHECK_NOTHROW(desk.validate());
  const auto j = to_json(desk);
  const PipelineConfig back = config_from_json(nlohmann::json::parse(j.dump()));
  CHECK(to_json(back).dump() == j.dump());

  const PipelineConfig partial = config_from_json(nlohmann::json::parse(R"({"seed": 7, "fusion": {"mode": "add"}})"));
  CHECK(partial.seed == 7);
  CHECK(partial.network.fusion.mode == fusion::FusionMode::add);
  CHECK(partial.steps == desk.steps);

  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"sed": 7})")), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"loss": {"gamma": 2}})")), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"steps": "many"})")), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"fusion": {"mode": "sum"}})")), std::invalid_argument);

  const auto path = std::filesystem::temp_directory_path() / "nnynet_cfg_test.json";
  std::ofstream(path) << R"({"num_classes": 2, "steps": 5})";
  const PipelineConfig loaded = load_config(path.string());
  CHECK(loaded.num_classes == 2);
  CHECK(loaded.network.decoder.num_classes == 2);
  CHECK(loaded.network.tab_features == synthetic::feature_count(2));
  std::filesystem::remove(path);
  CHECK_THROWS(load_config("/nonexistent/cfg.json"));

  PipelineConfig bad = desk;
  bad.sliding_overlap = 1.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("synthetic data") {
  const auto a = synthetic::synth_dataset(3, 2, {16, 16, 16}, 3);
  const auto b = synthetic::synth_dataset(3, 2, {16, 16, 16}, 3);
  REQUIRE(a.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(bitwise_equal(a[i].volume.grid, b[i].volume.grid));
    CHECK(a[i].mask.grid == b[i].mask.grid);
    CHECK(a[i].record.features == b[i].record.features);
    CHECK(a[i].record.features.size() == synthetic::feature_count(3));
  }
  CHECK_FALSE(bitwise_equal(a[0].volume.grid, synthetic::synth_dataset(4, 1, {16, 16, 16}, 3)[0].volume.grid));

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto one = synthetic::synth_dataset(seed, 1, {16, 16, 16}, 2);
    const auto cs = inference::components(one[0].mask.grid, {26, 1});
    CHECK(std::count_if(cs.begin(), cs.end(), [](const inference::Component& c) { return c.label == 1; }) == 1);
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto c = synthetic::synth_dataset(seed, 1, {16, 16, 16}, 3)[0];
    std::size_t fg = 0;
    for (int l : c.mask.grid.data()) fg += l > 0 ? 1 : 0;
    const double frac = double(fg) / 4096.0;
    CHECK(frac > 0.01);
    CHECK(frac < 0.5);
  }
  CHECK_THROWS(synthetic::synth_dataset(0, 1, {7, 16, 16}, 3));
}

TEST_CASE("checkpoints") {
  const PipelineConfig cfg = quick();
  SegmentationNetwork<float> net(cfg.network, 5);
  std::mt19937_64 rng(9);
  rng.discard(17);
  const Checkpoint ck = make_checkpoint(net, cfg, 42, rng, {{"stat", testutil::uniform<float>({3}, 1)}});
  const std::string bytes = serialize_checkpoint(ck);
  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.step == 42);
  CHECK(back.rng_state == ck.rng_state);
  REQUIRE(back.parameters.size() == net.parameters().entries().size());
  for (std::size_t i = 0; i < back.parameters.size(); ++i) {
    CHECK(back.parameters[i].name == net.parameters().entries()[i].first);
    CHECK(bitwise_equal(back.parameters[i].value, net.parameters().entries()[i].second.value()));
  }
  CHECK(bitwise_equal(back.buffer("stat"), ck.buffer("stat")));
  CHECK_THROWS(back.buffer("nope"));

  SegmentationNetwork<float> other(cfg.network, 6);
  restore_parameters(other, back);
  for (std::size_t i = 0; i < back.parameters.size(); ++i) {
    CHECK(bitwise_equal(other.parameters().entries()[i].second.value(), net.parameters().entries()[i].second.value()));
  }

  CHECK_NOTHROW(require_config_match(back, cfg));
  PipelineConfig changed = cfg;
  changed.seed = 99;
  CHECK_THROWS(require_config_match(back, changed));
  CHECK_THROWS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)));
  CHECK_THROWS(parse_checkpoint(bytes + "x"));
  CHECK_THROWS(parse_checkpoint("NOTACKPT" + bytes.substr(8)));

  const auto path = std::filesystem::temp_directory_path() / "nnynet_ck_test.bin";
  save_checkpoint(path.string(), ck);
  CHECK(serialize_checkpoint(load_checkpoint(path.string())) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("training contracts") {
  SUBCASE("zero learning rate leaves parameters unchanged") {
    PipelineConfig cfg = quick(4);
    cfg.optimizer.lr = 0.0;
    const TrainResult r = train(cfg);
    CHECK(r.steps == 4);
    const SegmentationNetwork<float> fresh(cfg.network, cfg.seed);
    for (std::size_t i = 0; i < r.checkpoint.parameters.size(); ++i) {
      CHECK(bitwise_equal(r.checkpoint.parameters[i].value, fresh.parameters().entries()[i].second.value()));
    }
  }
  SUBCASE("same seed, same trace and checkpoint bytes") {
    PipelineConfig cfg = quick(4);
    cfg.augment_enabled = true;
    const TrainResult a = train(cfg), b = train(cfg);
    CHECK(a.losses == b.losses);
    CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));
    for (double l : a.losses) CHECK(std::isfinite(l));
  }
  SUBCASE("hooks can stop training early") {
    std::size_t calls = 0;
    TrainHooks hooks;
    hooks.on_step = [&](std::size_t, double, const SegmentationNetwork<float>&) { return ++calls < 2; };
    CHECK(train(quick(10), hooks).steps == 2);
  }
  SUBCASE("a non-finite loss aborts with the step number") {
    PipelineConfig cfg = quick(3);
    cfg.optimizer.lr = 1e30;
    try {
      train(cfg);
      FAIL("training continued past a non-finite loss");
    } catch (const TrainingError& e) {
      CHECK(std::string(e.what()).find("non-finite loss at step") != std::string::npos);
    }
  }
}

TEST_CASE("untrained networks segment poorly") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PipelineConfig cfg = quick();
    cfg.seed = seed;
    const auto cases = load_cases(cfg);
    const DatasetStats stats = fit_dataset_stats(cases, cfg);
    const SegmentationNetwork<float> net(cfg.network, seed);
    const EvaluationResult r = evaluate(cfg, net, stats, cases);
    CHECK(r.aggregate.total().dice < 0.5);
    REQUIRE(r.cases.size() == 1);
    CHECK(r.aggregate.rows.size() == cfg.num_classes);
  }
}

TEST_CASE("prediction writes a parseable mask") {
  PipelineConfig cfg = quick(2);
  const TrainResult t = train(cfg);
  const auto c = synthetic::synth_dataset(11, 1, {16, 16, 16}, cfg.num_classes)[0];
  const LabelMask m = predict_volume(cfg, t.checkpoint, c.volume, c.record);
  CHECK(m.grid.shape() == c.volume.grid.shape());
  const LabelMask back = io::parse_label_nrrd(io::write_nrrd(m));
  CHECK(back.grid == m.grid);
  CHECK(m.max_label() < int(cfg.num_classes));
}
