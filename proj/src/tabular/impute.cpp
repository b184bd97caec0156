#include "nnynet/impute.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace nnynet::impute {

namespace {

// Mode with ties to the smaller code.
double mode_of(const Eigen::VectorXd& y) {
  std::map<long long, std::size_t> counts;
  for (Eigen::Index i = 0; i < y.size(); ++i) ++counts[std::llround(y[i])];
  long long best = 0;
  std::size_t best_n = 0;
  for (const auto& [code, n] : counts) {
    if (n > best_n) {
      best = code;
      best_n = n;
    }
  }
  return static_cast<double>(best);
}

struct Standardizer {
  Eigen::RowVectorXd mean, scale;

  void fit(const Eigen::MatrixXd& x) {
    mean = x.colwise().mean();
    scale.resize(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double var = (x.col(c).array() - mean[c]).square().mean();
      scale[c] = var > 0 ? std::sqrt(var) : 1.0;
    }
  }
  Eigen::RowVectorXd apply(const Eigen::RowVectorXd& r) const { return (r - mean).cwiseQuotient(scale); }
};

class ConstantImputer final : public Imputer {
 public:
  explicit ConstantImputer(FeatureKind k) : kind_(k) {}
  void fit(const Eigen::MatrixXd&, const Eigen::VectorXd& y) override {
    if (y.size() == 0) throw ContractError("constant imputer: no training rows");
    value_ = kind_ == FeatureKind::continuous ? y.mean() : mode_of(y);
  }
  double predict(const Eigen::RowVectorXd&) const override { return value_; }

 private:
  FeatureKind kind_;
  double value_ = 0.0;
};

class KnnImputer final : public Imputer {
 public:
  KnnImputer(FeatureKind kind, std::size_t k) : kind_(kind), k_(k) {}
  void fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) override {
    if (y.size() == 0) throw ContractError("knn imputer: no training rows");
    std_.fit(x);
    x_.resize(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) x_.row(r) = std_.apply(x.row(r));
    y_ = y;
  }
  double predict(const Eigen::RowVectorXd& q) const override {
    const Eigen::RowVectorXd z = std_.apply(q);
    std::vector<std::pair<double, Eigen::Index>> d(static_cast<std::size_t>(x_.rows()));
    for (Eigen::Index r = 0; r < x_.rows(); ++r) d[static_cast<std::size_t>(r)] = {(x_.row(r) - z).squaredNorm(), r};
    const std::size_t k = std::min<std::size_t>(k_, d.size());
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    Eigen::VectorXd nn(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) nn[static_cast<Eigen::Index>(i)] = y_[d[i].second];
    return kind_ == FeatureKind::continuous ? nn.mean() : mode_of(nn);
  }

 private:
  FeatureKind kind_;
  std::size_t k_;
  Standardizer std_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
};

class LinearImputer final : public Imputer {
 public:
  void fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) override {
    Eigen::MatrixXd a(x.rows(), x.cols() + 1);
    a.col(0).setOnes();
    a.rightCols(x.cols()) = x;
    coef_ = a.completeOrthogonalDecomposition().solve(y);
  }
  double predict(const Eigen::RowVectorXd& x) const override {
    return coef_[0] + x.dot(coef_.tail(coef_.size() - 1));
  }

 private:
  Eigen::VectorXd coef_;
};

class LogisticImputer final : public Imputer {
 public:
  LogisticImputer(std::size_t iterations, double lr, double l2) : iters_(iterations), lr_(lr), l2_(l2) {}
  void fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) override {
    if (y.size() == 0) throw ContractError("logistic imputer: no training rows");
    classes_.clear();
    for (Eigen::Index i = 0; i < y.size(); ++i) classes_.push_back(std::llround(y[i]));
    std::sort(classes_.begin(), classes_.end());
    classes_.erase(std::unique(classes_.begin(), classes_.end()), classes_.end());
    std_.fit(x);
    const Eigen::Index n = x.rows(), p = x.cols() + 1;
    const auto k = static_cast<Eigen::Index>(classes_.size());
    Eigen::MatrixXd a(n, p);
    a.col(0).setOnes();
    for (Eigen::Index r = 0; r < n; ++r) a.row(r).tail(p - 1) = std_.apply(x.row(r));
    Eigen::MatrixXd target = Eigen::MatrixXd::Zero(n, k);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto it = std::lower_bound(classes_.begin(), classes_.end(), std::llround(y[r]));
      target(r, it - classes_.begin()) = 1.0;
    }
    w_ = Eigen::MatrixXd::Zero(p, k);
    for (std::size_t it = 0; it < iters_; ++it) {
      const Eigen::MatrixXd prob = softmax_rows(a * w_);
      Eigen::MatrixXd grad = a.transpose() * (prob - target) / static_cast<double>(n);
      grad.bottomRows(p - 1) += l2_ * w_.bottomRows(p - 1);
      w_ -= lr_ * grad;
    }
  }
  double predict(const Eigen::RowVectorXd& x) const override {
    Eigen::RowVectorXd row(w_.rows());
    row[0] = 1.0;
    row.tail(w_.rows() - 1) = std_.apply(x);
    const Eigen::RowVectorXd logits = row * w_;
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.size(); ++c) {
      if (logits[c] > logits[best]) best = c;
    }
    return static_cast<double>(classes_[static_cast<std::size_t>(best)]);
  }

 private:
  static Eigen::MatrixXd softmax_rows(Eigen::MatrixXd z) {
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      z.row(r).array() -= z.row(r).maxCoeff();
      z.row(r) = z.row(r).array().exp().matrix();
      z.row(r) /= z.row(r).sum();
    }
    return z;
  }

  std::size_t iters_;
  double lr_, l2_;
  Standardizer std_;
  std::vector<long long> classes_;
  Eigen::MatrixXd w_;
};

class StumpImputer final : public Imputer {
 public:
  explicit StumpImputer(FeatureKind kind) : kind_(kind) {}
  void fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) override {
    if (y.size() == 0) throw ContractError("stump imputer: no training rows");
    left_ = right_ = leaf(y, std::vector<Eigen::Index>(all_rows(y.size())));
    feature_ = -1;
    double best = cost(y, all_rows(y.size()));
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      std::vector<double> values(x.col(c).data(), x.col(c).data() + x.rows());
      std::sort(values.begin(), values.end());
      values.erase(std::unique(values.begin(), values.end()), values.end());
      for (std::size_t i = 0; i + 1 < values.size(); ++i) {
        const double thr = 0.5 * (values[i] + values[i + 1]);
        std::vector<Eigen::Index> lo, hi;
        for (Eigen::Index r = 0; r < x.rows(); ++r) (x(r, c) <= thr ? lo : hi).push_back(r);
        const double total = cost(y, lo) + cost(y, hi);
        if (total < best - 1e-12) {
          best = total;
          feature_ = c;
          threshold_ = thr;
          left_ = leaf(y, lo);
          right_ = leaf(y, hi);
        }
      }
    }
  }
  double predict(const Eigen::RowVectorXd& x) const override {
    if (feature_ < 0) return left_;
    return x[feature_] <= threshold_ ? left_ : right_;
  }

 private:
  static std::vector<Eigen::Index> all_rows(Eigen::Index n) {
    std::vector<Eigen::Index> r(static_cast<std::size_t>(n));
    std::iota(r.begin(), r.end(), Eigen::Index{0});
    return r;
  }
  Eigen::VectorXd subset(const Eigen::VectorXd& y, const std::vector<Eigen::Index>& rows) const {
    Eigen::VectorXd s(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) s[static_cast<Eigen::Index>(i)] = y[rows[i]];
    return s;
  }
  double leaf(const Eigen::VectorXd& y, const std::vector<Eigen::Index>& rows) const {
    const Eigen::VectorXd s = subset(y, rows);
    return kind_ == FeatureKind::continuous ? s.mean() : mode_of(s);
  }
  // Sum of squared error, or misclassification count against the leaf mode.
  double cost(const Eigen::VectorXd& y, const std::vector<Eigen::Index>& rows) const {
    if (rows.empty()) return 0.0;
    const Eigen::VectorXd s = subset(y, rows);
    if (kind_ == FeatureKind::continuous) return (s.array() - s.mean()).square().sum();
    const double m = mode_of(s);
    return static_cast<double>((s.array() != m).count());
  }

  FeatureKind kind_;
  Eigen::Index feature_ = -1;
  double threshold_ = 0.0, left_ = 0.0, right_ = 0.0;
};

// Rows of `rows` -> predictor matrix of all features except `target`, with
// missing entries replaced by `fill`.
Eigen::MatrixXd predictors(const std::vector<PatientRecord>& records, const std::vector<std::size_t>& rows,
                           std::size_t target, const Eigen::RowVectorXd& fill) {
  const std::size_t f = records.front().features.size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(f - 1));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const PatientRecord& r = records[rows[i]];
    Eigen::Index col = 0;
    for (std::size_t c = 0; c < f; ++c) {
      if (c == target) continue;
      x(static_cast<Eigen::Index>(i), col) = r.missing[c] ? fill[col] : r.features[c];
      ++col;
    }
  }
  return x;
}

// Per-predictor mean over present entries of `rows` (0 when none present).
Eigen::RowVectorXd predictor_means(const std::vector<PatientRecord>& records, const std::vector<std::size_t>& rows,
                                   std::size_t target) {
  const std::size_t f = records.front().features.size();
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(f - 1));
  Eigen::Index col = 0;
  for (std::size_t c = 0; c < f; ++c) {
    if (c == target) continue;
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t r : rows) {
      if (!records[r].missing[c]) {
        s += records[r].features[c];
        ++n;
      }
    }
    mean[col++] = n ? s / static_cast<double>(n) : 0.0;
  }
  return mean;
}

Eigen::VectorXd targets(const std::vector<PatientRecord>& records, const std::vector<std::size_t>& rows,
                        std::size_t feature) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) y[static_cast<Eigen::Index>(i)] = records[rows[i]].features[feature];
  return y;
}

std::unique_ptr<Imputer> fit_on(const Candidate& cand, FeatureKind kind, const std::vector<PatientRecord>& records,
                                const std::vector<std::size_t>& rows, std::size_t feature, Eigen::RowVectorXd& fill) {
  fill = predictor_means(records, rows, feature);
  auto model = cand.make(kind);
  model->fit(predictors(records, rows, feature, fill), targets(records, rows, feature));
  return model;
}

void check_records(const std::vector<PatientRecord>& records, std::size_t feature) {
  if (records.empty()) throw ContractError("impute: no records");
  const std::size_t f = records.front().features.size();
  for (const auto& r : records) {
    if (r.features.size() != f || r.missing.size() != f || r.kind.size() != f) {
      throw ContractError("impute: record '" + r.id + "' has inconsistent feature length");
    }
  }
  if (feature >= f) throw std::out_of_range("impute: feature index " + std::to_string(feature) + " out of range");
}

}  // namespace

Candidate constant_candidate() {
  return {"constant", true, true, [](FeatureKind k) { return std::make_unique<ConstantImputer>(k); }};
}

Candidate knn_candidate(std::size_t k) {
  if (k == 0) throw ContractError("knn: k must be positive");
  return {"knn" + std::to_string(k), true, true, [k](FeatureKind kind) { return std::make_unique<KnnImputer>(kind, k); }};
}

Candidate linear_candidate() {
  return {"linear", true, false, [](FeatureKind) { return std::make_unique<LinearImputer>(); }};
}

Candidate logistic_candidate(std::size_t iterations, double learning_rate, double l2) {
  return {"logistic", false, true, [=](FeatureKind) {
            return std::make_unique<LogisticImputer>(iterations, learning_rate, l2);
          }};
}

Candidate stump_candidate() {
  return {"stump", true, true, [](FeatureKind k) { return std::make_unique<StumpImputer>(k); }};
}

ImputerRegistry ImputerRegistry::defaults(std::uint64_t seed) {
  ImputerRegistry r;
  r.candidates = {constant_candidate(), knn_candidate(3), linear_candidate(), logistic_candidate(), stump_candidate()};
  r.seed = seed;
  return r;
}

void ImputerRegistry::validate() const {
  if (folds < 2) throw ContractError("impute: at least 2 folds required");
  bool cont = false, cat = false;
  for (const auto& c : candidates) {
    cont = cont || c.continuous;
    cat = cat || c.categorical;
  }
  if (!cont || !cat) throw ContractError("impute: registry must cover continuous and categorical features");
}

double r_squared(const Eigen::VectorXd& truth, const Eigen::VectorXd& pred) {
  const double mean = truth.mean();
  const double ss_tot = (truth.array() - mean).square().sum();
  const double ss_res = (truth - pred).squaredNorm();
  if (ss_tot == 0.0) throw ContractError("r_squared: zero-variance target");
  return 1.0 - ss_res / ss_tot;
}

double macro_f1(const Eigen::VectorXd& truth, const Eigen::VectorXd& pred) {
  std::map<long long, std::array<std::size_t, 3>> c;  // tp, fp, fn
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    const long long t = std::llround(truth[i]), p = std::llround(pred[i]);
    if (t == p) {
      ++c[t][0];
    } else {
      ++c[p][1];
      ++c[t][2];
    }
  }
  if (c.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [label, k] : c) {
    const double den = static_cast<double>(2 * k[0] + k[1] + k[2]);
    s += den > 0 ? 2.0 * static_cast<double>(k[0]) / den : 0.0;
  }
  return s / static_cast<double>(c.size());
}

std::vector<std::size_t> assign_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::vector<std::size_t> fold(n);
  for (std::size_t pos = 0; pos < n; ++pos) fold[order[pos]] = pos % k;
  return fold;
}

Selection fit_select(const std::vector<PatientRecord>& records, std::size_t feature, const ImputerRegistry& registry) {
  registry.validate();
  check_records(records, feature);
  Selection sel;
  sel.feature = feature;
  sel.kind = records.front().kind[feature];

  std::vector<std::size_t> present;
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (!records[r].missing[feature]) present.push_back(r);
  }
  if (present.empty()) {
    sel.model = "zero";
    sel.flags.push_back("uninformative column");
    return sel;
  }
  const Eigen::VectorXd y = targets(records, present, feature);
  if (present.size() < registry.folds) {
    sel.model = "constant";
    sel.flags.push_back("too few complete rows for cross-validation (" + std::to_string(present.size()) + " < " +
                        std::to_string(registry.folds) + "); using constant imputer");
    return sel;
  }
  if ((y.array() == y[0]).all()) {
    sel.model = "constant";
    sel.flags.push_back("zero-variance target; using constant imputer");
    return sel;
  }

  const std::vector<std::size_t> fold = assign_folds(present.size(), registry.folds, registry.seed + 0x9e37 * feature);
  bool have = false;
  for (const Candidate& cand : registry.candidates) {
    if (!cand.supports(sel.kind)) continue;
    Eigen::VectorXd oof(y.size());
    for (std::size_t k = 0; k < registry.folds; ++k) {
      std::vector<std::size_t> train, held;
      std::vector<Eigen::Index> held_pos;
      for (std::size_t i = 0; i < present.size(); ++i) {
        if (fold[i] == k) {
          held.push_back(present[i]);
          held_pos.push_back(static_cast<Eigen::Index>(i));
        } else {
          train.push_back(present[i]);
        }
      }
      Eigen::RowVectorXd fill;
      const auto model = fit_on(cand, sel.kind, records, train, feature, fill);
      const Eigen::MatrixXd xh = predictors(records, held, feature, fill);
      for (std::size_t i = 0; i < held.size(); ++i) {
        oof[held_pos[i]] = model->predict(xh.row(static_cast<Eigen::Index>(i)));
      }
    }
    const double score = sel.kind == FeatureKind::continuous ? r_squared(y, oof) : macro_f1(y, oof);
    sel.scores.push_back({cand.name, score});
    if (!have || score > sel.score) {
      sel.model = cand.name;
      sel.score = score;
      have = true;
    }
  }
  if (!have) throw ContractError("impute: no candidate supports feature " + std::to_string(feature));
  sel.cross_validated = true;
  return sel;
}

ImputeResult impute_all(const std::vector<PatientRecord>& records, const ImputerRegistry& registry) {
  ImputeResult out;
  out.records = records;
  if (records.empty()) return out;
  const std::size_t f = records.front().features.size();
  for (std::size_t feature = 0; feature < f; ++feature) {
    check_records(records, feature);
    std::vector<std::size_t> present, missing;
    for (std::size_t r = 0; r < records.size(); ++r) (records[r].missing[feature] ? missing : present).push_back(r);
    if (missing.empty()) continue;
    Selection sel = fit_select(records, feature, registry);
    if (sel.model == "zero") {
      for (std::size_t r : missing) out.records[r].features[feature] = 0.0;
    } else {
      const Candidate* cand = nullptr;
      Candidate fallback = constant_candidate();
      for (const Candidate& c : registry.candidates) {
        if (c.name == sel.model) cand = &c;
      }
      if (cand == nullptr) cand = &fallback;
      Eigen::RowVectorXd fill;
      const auto model = fit_on(*cand, sel.kind, records, present, feature, fill);
      const Eigen::MatrixXd xm = predictors(records, missing, feature, fill);
      for (std::size_t i = 0; i < missing.size(); ++i) {
        double v = model->predict(xm.row(static_cast<Eigen::Index>(i)));
        if (sel.kind == FeatureKind::categorical) v = static_cast<double>(std::llround(v));
        out.records[missing[i]].features[feature] = v;
      }
    }
    out.selections.push_back(std::move(sel));
  }
  for (auto& r : out.records) r.missing.assign(f, false);
  return out;
}

}  // namespace nnynet::impute
