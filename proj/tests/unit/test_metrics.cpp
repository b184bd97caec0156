#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "nnynet/metrics.hpp"
#include "nnynet/selftest.hpp"

using namespace nnynet;
using namespace nnynet::metrics;

namespace {

LabelGrid grid_with(const Shape& s, const std::vector<Voxel>& on, int label = 1) {
  LabelGrid g(s, 0);
  for (const Voxel& v : on) g.at(v[0], v[1], v[2]) = label;
  return g;
}

std::vector<Voxel> random_points(std::mt19937_64& rng, std::size_t n) {
  std::vector<Voxel> p;
  for (std::size_t i = 0; i < n; ++i) p.push_back({std::int64_t(rng() % 10), std::int64_t(rng() % 10), std::int64_t(rng() % 10)});
  return p;
}

}  // namespace

TEST_CASE("confusion fixture") {
  const LabelGrid pred = grid_with({2, 2, 2}, {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}});
  const LabelGrid truth = grid_with({2, 2, 2}, {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}});
  const ConfusionCounts cc = confusion(pred, truth, 2);
  const ClassCounts& f = cc.per_class[1];
  CHECK(f.tp == 2);
  CHECK(f.fp == 1);
  CHECK(f.fn == 1);
  CHECK(f.tn == 4);
  CHECK(cc.voxels == 8);
  CHECK(std::abs(dice(cc, 1).value - 2.0 / 3.0) < 1e-15);
  CHECK(iou(cc, 1).value == 0.5);
  const AccRecallPrecision arp = acc_recall_precision(cc, 1);
  CHECK(arp.accuracy.value == 0.75);
  CHECK(std::abs(arp.recall.value - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(arp.precision.value - 2.0 / 3.0) < 1e-15);

  const ConfusionCounts same = confusion(truth, truth, 2);
  for (const auto& c : same.per_class) {
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
  }
  const LabelGrid bg(Shape{3, 3, 3}, 0);
  const ConfusionCounts empty = confusion(bg, bg, 2);
  CHECK(empty.per_class[1].tp == 0);
  CHECK(empty.per_class[1].tn == 27);
  CHECK(dice(empty, 1).value == 1.0);
  CHECK(dice(empty, 1).flagged);
  CHECK(acc_recall_precision(empty, 1).recall.flagged);
  CHECK(acc_recall_precision(confusion(LabelGrid(Shape{2, 2, 2}, 0), truth, 2), 1).recall.value == 0.0);
  CHECK(dice(confusion(grid_with({2, 2, 2}, {{0, 0, 0}}), grid_with({2, 2, 2}, {{1, 1, 1}}), 2), 1).value == 0.0);
  CHECK_THROWS(confusion(bg, pred, 2));
}

TEST_CASE("count identities on random masks") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const LabelGrid a = testutil::random_labels({4, 5, 3}, 3, seed);
    const LabelGrid b = testutil::random_labels({4, 5, 3}, 3, seed + 100);
    const ConfusionCounts ab = confusion(a, b, 3), ba = confusion(b, a, 3);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(ab.per_class[c].total() == 60);
      const double d = dice(ab, c).value;
      CHECK(std::abs(iou(ab, c).value - d / (2.0 - d)) < 1e-12);
      CHECK(d == dice(ba, c).value);
    }
    CHECK(std::abs(mean_iou(ab, {1, 2}) - 0.5 * (iou(ab, 1).value + iou(ab, 2).value)) < 1e-15);
  }
}

TEST_CASE("boundary voxels") {
  LabelGrid cube(Shape{5, 5, 5}, 0);
  for (std::size_t x = 1; x < 4; ++x)
    for (std::size_t y = 1; y < 4; ++y)
      for (std::size_t z = 1; z < 4; ++z) cube.at(x, y, z) = 1;
  const auto b = boundary(cube, 1);
  CHECK(b.size() == 26);
  CHECK(std::find(b.begin(), b.end(), Voxel{2, 2, 2}) == b.end());
  CHECK(std::is_sorted(b.begin(), b.end()));
  // the volume exterior counts as outside
  CHECK(boundary(LabelGrid(Shape{3, 3, 3}, 1), 1).size() == 26);
  CHECK(boundary(cube, 2).empty());
}

TEST_CASE("hd95") {
  const Spacing unit{1, 1, 1};
  CHECK(hd95({{0, 0, 0}}, {{3, 0, 0}}, unit).mm == 3.0);
  CHECK(hd95({{0, 0, 0}}, {{3, 0, 0}}, {2, 1, 1}).mm == 6.0);
  CHECK_FALSE(hd95({}, {{3, 0, 0}}, unit).defined);
  CHECK(nearest_rank_95(1) == 0);
  CHECK(nearest_rank_95(20) == 18);
  CHECK(nearest_rank_95(21) == 19);
  CHECK(nearest_rank_95(100) == 94);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto x = random_points(rng, 1 + rng() % 30), y = random_points(rng, 1 + rng() % 30);
    const Spacing sp{0.5 + 0.1 * double(seed % 4), 1.0, 1.75};
    const Distance d = hd95(x, y, sp);
    CHECK(d.defined);
    CHECK(d.mm == selftest::oracle::hd95_all_pairs(x, y, sp));
    CHECK(d.mm == hd95(y, x, sp).mm);
    CHECK(hd95(x, x, sp).mm == 0.0);

    const KdTree tree(y, sp);
    for (const Voxel& q : x) {
      double best = INFINITY;
      for (const Voxel& p : y) best = std::min(best, squared_distance(q, p, sp));
      CHECK(tree.nearest_sq(q) == best);
    }
  }
}

TEST_CASE("report") {
  const LabelGrid t = testutil::random_labels({6, 6, 6}, 3, 1);
  const SegmentationReport same = report(t, t, 3, {1, 1, 1}, {"liver", "tumor"});
  REQUIRE(same.rows.size() == 3);
  CHECK(same.rows[0].name == "liver");
  CHECK(same.total().name == "Total");
  for (const ReportRow& r : same.rows) {
    CHECK(r.dice == 1.0);
    CHECK(r.miou == 1.0);
    CHECK(r.accuracy == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.precision == 1.0);
    CHECK(r.hd95.mm == 0.0);
  }
  CHECK(SegmentationReport::columns() ==
        std::vector<std::string>{"Class", "Dice", "MIoU", "HD95", "Accuracy", "Recall", "Precision"});
  const std::string csv = same.to_delimited();
  CHECK(csv.rfind("Class,Dice,MIoU,HD95,Accuracy,Recall,Precision\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(same.to_json().find("\"Total\"") != std::string::npos);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const LabelGrid p = testutil::random_labels({8, 8, 8}, 3, seed);
    const LabelGrid q = testutil::random_labels({8, 8, 8}, 3, seed + 7);
    const Spacing sp{1.0, 0.8, 2.0};
    const SegmentationReport r = report(p, q, 3, sp);
    const SegmentationReport o = selftest::oracle::brute_report(p, q, 3, sp);
    REQUIRE(r.rows.size() == o.rows.size());
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
      CHECK(r.rows[i].dice == doctest::Approx(o.rows[i].dice).epsilon(1e-12));
      CHECK(r.rows[i].miou == doctest::Approx(o.rows[i].miou).epsilon(1e-12));
      CHECK(r.rows[i].hd95.mm == doctest::Approx(o.rows[i].hd95.mm).epsilon(1e-12));
      CHECK(r.rows[i].accuracy == doctest::Approx(o.rows[i].accuracy).epsilon(1e-12));
      CHECK(r.rows[i].recall == doctest::Approx(o.rows[i].recall).epsilon(1e-12));
      CHECK(r.rows[i].precision == doctest::Approx(o.rows[i].precision).epsilon(1e-12));
    }
    const double diameter = std::sqrt(7.0 * 7.0 + 5.6 * 5.6 + 14.0 * 14.0);
    for (const ReportRow& row : r.rows) {
      for (double v : {row.dice, row.miou, row.accuracy, row.recall, row.precision}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
      CHECK(row.hd95.mm <= diameter + 1e-9);
    }
  }

  // an absent class leaves HD95 undefined and out of the Total
  LabelGrid one(Shape{4, 4, 4}, 0);
  one.at(1, 1, 1) = 1;
  one.at(2, 2, 2) = 1;
  LabelGrid other = one;
  other.at(3, 3, 3) = 2;
  const SegmentationReport r = report(one, other, 3, {1, 1, 1});
  CHECK_FALSE(r.rows[1].hd95.defined);
  CHECK(r.total().hd95.defined);
  CHECK(r.total().hd95.mm == r.rows[0].hd95.mm);
  CHECK(r.to_delimited().find("nan") != std::string::npos);

  const SegmentationReport avg = average_reports({report(t, t, 3, {1, 1, 1}), report(one, other, 3, {1, 1, 1})});
  CHECK(avg.rows[0].dice == doctest::Approx(0.5 * (1.0 + r.rows[0].dice)));
}
