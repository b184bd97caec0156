#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <optional>
#include <random>
#include <set>

#include "nnynet/impute.hpp"

using namespace nnynet;
using namespace nnynet::impute;

namespace {

using Column = std::vector<std::optional<double>>;

std::vector<PatientRecord> table(const std::vector<Column>& cols, const std::vector<FeatureKind>& kinds) {
  std::vector<PatientRecord> out(cols.front().size());
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r].id = "r" + std::to_string(r);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      out[r].features.push_back(cols[c][r].value_or(0.0));
      out[r].missing.push_back(!cols[c][r].has_value());
      out[r].kind.push_back(kinds[c]);
    }
  }
  return out;
}

ImputerRegistry registry(std::vector<Candidate> c, std::uint64_t seed = 0) {
  ImputerRegistry r;
  r.candidates = std::move(c);
  r.seed = seed;
  return r;
}

// Macro F1 over the classes seen in truth or prediction.
double f1_oracle(const std::vector<int>& truth, const std::vector<int>& pred) {
  std::map<int, int> tp, fp, fn;
  std::set<int> classes(truth.begin(), truth.end());
  classes.insert(pred.begin(), pred.end());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == pred[i]) {
      ++tp[truth[i]];
    } else {
      ++fp[pred[i]];
      ++fn[truth[i]];
    }
  }
  double s = 0.0;
  for (int c : classes) s += 2.0 * tp[c] / (2.0 * tp[c] + fp[c] + fn[c]);
  return s / static_cast<double>(classes.size());
}

}  // namespace

TEST_CASE("exact linear dependence selects least squares") {
  Column x, y;
  for (int i = 0; i < 20; ++i) {
    x.push_back(0.3 * i * i - i);
    y.push_back(2.0 * (0.3 * i * i - i) + 1.0);
  }
  y[4].reset();
  y[11].reset();
  const auto recs = table({x, y}, {FeatureKind::continuous, FeatureKind::continuous});
  const Selection s = fit_select(recs, 1, registry({constant_candidate(), linear_candidate()}));
  CHECK(s.model == "linear");
  CHECK(s.cross_validated);
  CHECK(std::abs(s.score - 1.0) < 1e-12);
  REQUIRE(s.scores.size() == 2);
  CHECK(s.scores[0].score < 0.5);

  const ImputeResult res = impute_all(recs, registry({constant_candidate(), linear_candidate()}));
  CHECK(std::abs(res.records[4].features[1] - (2.0 * *x[4] + 1.0)) < 1e-9);
  CHECK(std::abs(res.records[11].features[1] - (2.0 * *x[11] + 1.0)) < 1e-9);
}

TEST_CASE("zero-variance target falls back to the constant imputer") {
  Column x, y;
  for (int i = 0; i < 10; ++i) {
    x.push_back(i);
    y.push_back(4.25);
  }
  y[3].reset();
  const auto recs = table({x, y}, {FeatureKind::continuous, FeatureKind::continuous});
  const Selection s = fit_select(recs, 1, ImputerRegistry::defaults());
  CHECK(s.model == "constant");
  CHECK_FALSE(s.cross_validated);
  REQUIRE(s.flags.size() == 1);
  CHECK(s.flags[0].find("zero-variance") != std::string::npos);
  CHECK(impute_all(recs, ImputerRegistry::defaults()).records[3].features[1] == 4.25);
}

TEST_CASE("categorical threshold copy: nearest neighbour beats the mode") {
  Column x, y;
  for (int i = 0; i < 20; ++i) {
    const double v = i < 10 ? 1.0 + i : 21.0 + (i - 10);
    x.push_back(v);
    y.push_back(v > 15.0 ? 1.0 : 0.0);
  }
  // interleave the classes so the row order carries no information
  std::vector<std::size_t> perm{0, 10, 1, 11, 2, 12, 3, 13, 4, 14, 5, 15, 6, 16, 7, 17, 8, 18, 9, 19};
  Column px, py;
  for (std::size_t i : perm) {
    px.push_back(x[i]);
    py.push_back(y[i]);
  }
  const auto recs = table({px, py}, {FeatureKind::continuous, FeatureKind::categorical});
  const ImputerRegistry reg = registry({constant_candidate(), knn_candidate(1)}, 7);
  const Selection s = fit_select(recs, 1, reg);
  CHECK(s.model == "knn1");
  CHECK(s.score == 1.0);

  // hand-coded out-of-fold mode predictions on the same folds
  const auto folds = assign_folds(20, reg.folds, reg.seed + 0x9e37 * 1);
  std::vector<int> truth, pred(20);
  for (const auto& v : py) truth.push_back(static_cast<int>(*v));
  for (std::size_t k = 0; k < reg.folds; ++k) {
    int count[2] = {0, 0};
    for (std::size_t i = 0; i < 20; ++i) {
      if (folds[i] != k) ++count[truth[i]];
    }
    const int mode = count[1] > count[0] ? 1 : 0;
    for (std::size_t i = 0; i < 20; ++i) {
      if (folds[i] == k) pred[i] = mode;
    }
  }
  REQUIRE(s.scores.size() == 2);
  CHECK(s.scores[0].name == "constant");
  CHECK(std::abs(s.scores[0].score - f1_oracle(truth, pred)) < 1e-12);
  CHECK(s.scores[0].score < 1.0);
}

TEST_CASE("impute_all edge cases") {
  SUBCASE("no missing cells") {
    const auto recs = table({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}}, {FeatureKind::continuous, FeatureKind::continuous});
    const ImputeResult r = impute_all(recs, ImputerRegistry::defaults());
    CHECK(r.selections.empty());
    for (std::size_t i = 0; i < recs.size(); ++i) CHECK(r.records[i].features == recs[i].features);
  }
  SUBCASE("mean of the present values") {
    const auto recs = table({{1.0, 2.0, std::nullopt, 4.0}}, {FeatureKind::continuous});
    const ImputeResult r = impute_all(recs, ImputerRegistry::defaults());
    CHECK(std::abs(r.records[2].features[0] - 7.0 / 3.0) < 1e-12);
    REQUIRE(r.selections.size() == 1);
    CHECK(r.selections[0].model == "constant");
    CHECK_FALSE(r.selections[0].flags.empty());
  }
  SUBCASE("all-missing column") {
    const auto recs = table({{1.0, 2.0, 3.0}, {std::nullopt, std::nullopt, std::nullopt}},
                            {FeatureKind::continuous, FeatureKind::continuous});
    const ImputeResult r = impute_all(recs, ImputerRegistry::defaults());
    for (const auto& rec : r.records) {
      CHECK(rec.features[1] == 0.0);
      CHECK(rec.missing == std::vector<bool>{false, false});
    }
    REQUIRE(r.selections.size() == 1);
    CHECK(r.selections[0].flags == std::vector<std::string>{"uninformative column"});
  }
  SUBCASE("mode for a categorical column, ties to the smaller code") {
    const auto recs = table({{2.0, 1.0, 1.0, 2.0, std::nullopt}}, {FeatureKind::categorical});
    CHECK(impute_all(recs, ImputerRegistry::defaults()).records[4].features[0] == 1.0);
  }
}

TEST_CASE("imputation invariants on a mixed table") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  Column a, b, c, d;
  for (int i = 0; i < 40; ++i) {
    const double u = nd(rng), v = nd(rng);
    a.push_back(u);
    b.push_back(0.5 * u - v + 0.1 * nd(rng));
    c.push_back(u + v > 0 ? 1.0 : 0.0);
    d.push_back(static_cast<double>(rng() % 3));
  }
  for (int i = 0; i < 40; i += 7) a[i].reset();
  for (int i = 3; i < 40; i += 5) b[i].reset();
  for (int i = 1; i < 40; i += 6) c[i].reset();
  for (int i = 2; i < 40; i += 9) d[i].reset();
  const std::vector<FeatureKind> kinds{FeatureKind::continuous, FeatureKind::continuous, FeatureKind::categorical,
                                       FeatureKind::categorical};
  const auto recs = table({a, b, c, d}, kinds);
  const ImputeResult r1 = impute_all(recs, ImputerRegistry::defaults(11));
  const ImputeResult r2 = impute_all(recs, ImputerRegistry::defaults(11));
  for (std::size_t i = 0; i < recs.size(); ++i) {
    for (std::size_t f = 0; f < 4; ++f) {
      if (!recs[i].missing[f]) CHECK(std::memcmp(&r1.records[i].features[f], &recs[i].features[f], 8) == 0);
      CHECK(r1.records[i].features[f] == r2.records[i].features[f]);
      CHECK_FALSE(r1.records[i].missing[f]);
      if (kinds[f] == FeatureKind::categorical) {
        CHECK(r1.records[i].features[f] == std::round(r1.records[i].features[f]));
      }
    }
  }
  REQUIRE(r1.selections.size() == 4);
  for (const Selection& s : r1.selections) {
    for (const auto& cs : s.scores) CHECK(s.score >= cs.score);
    // only kind-compatible candidates are scored
    for (const auto& cs : s.scores) {
      if (s.kind == FeatureKind::continuous) CHECK(cs.name != "logistic");
      if (s.kind == FeatureKind::categorical) CHECK(cs.name != "linear");
    }
  }
}

TEST_CASE("scoring helpers and registry validation") {
  Eigen::VectorXd t(4), p(4);
  t << 1, 2, 3, 4;
  p << 1, 2, 3, 4;
  CHECK(r_squared(t, p) == 1.0);
  p << 2.5, 2.5, 2.5, 2.5;
  CHECK(r_squared(t, p) == 0.0);
  CHECK_THROWS_AS(r_squared(Eigen::VectorXd::Constant(3, 1.0), Eigen::VectorXd::Zero(3)), ContractError);

  Eigen::VectorXd ct(4), cp(4);
  ct << 0, 0, 1, 1;
  cp << 0, 1, 1, 1;
  // class 0: tp1 fn1 -> 2/3; class 1: tp2 fp1 -> 4/5
  CHECK(std::abs(macro_f1(ct, cp) - (2.0 / 3.0 + 0.8) / 2.0) < 1e-15);

  const auto folds = assign_folds(23, 5, 3);
  std::vector<int> counts(5, 0);
  for (auto f : folds) ++counts[f];
  for (int n : counts) CHECK((n == 4 || n == 5));
  CHECK(assign_folds(23, 5, 3) == folds);

  ImputerRegistry bad = ImputerRegistry::defaults();
  bad.folds = 1;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  CHECK_THROWS_AS(registry({linear_candidate()}).validate(), ContractError);
  CHECK_THROWS_AS(knn_candidate(0), ContractError);
  const auto recs = table({{1.0, 2.0}}, {FeatureKind::continuous});
  CHECK_THROWS_AS(fit_select(recs, 3, ImputerRegistry::defaults()), std::out_of_range);
  CHECK_THROWS_AS(fit_select({}, 0, ImputerRegistry::defaults()), ContractError);
}
