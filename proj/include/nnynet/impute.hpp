#pragma once
// Missing-value imputation for patient tables: per feature, candidate
// predictors are scored by k-fold cross-validation on the rows where the
// feature is present (R^2 for continuous, macro-F1 for categorical) and the
// best one fills the missing cells.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nnynet/nrrd_io.hpp"

namespace nnynet::impute {

using io::FeatureKind;
using io::PatientRecord;

class Imputer {
 public:
  virtual ~Imputer() = default;
  // Rows of x are samples; categorical targets arrive as integer codes.
  virtual void fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) = 0;
  virtual double predict(const Eigen::RowVectorXd& x) const = 0;
};

struct Candidate {
  std::string name;
  bool continuous = true;
  bool categorical = true;
  std::function<std::unique_ptr<Imputer>(FeatureKind)> make;

  bool supports(FeatureKind k) const { return k == FeatureKind::continuous ? continuous : categorical; }
};

// Mean (continuous) or mode (categorical, ties to the smaller code).
Candidate constant_candidate();
// k nearest neighbours in standardized predictor space; mean or majority vote.
Candidate knn_candidate(std::size_t k = 3);
// Ordinary least squares with intercept (continuous only).
Candidate linear_candidate();
// Multinomial logistic regression by full-batch gradient descent (categorical only).
Candidate logistic_candidate(std::size_t iterations = 300, double learning_rate = 0.5, double l2 = 1e-3);
// Single-split regression/classification tree.
Candidate stump_candidate();

struct ImputerRegistry {
  std::vector<Candidate> candidates;
  std::size_t folds = 5;
  std::uint64_t seed = 0;

  // constant, knn(3), linear, logistic, stump
  static ImputerRegistry defaults(std::uint64_t seed = 0);
  void validate() const;
};

struct CandidateScore {
  std::string name;
  double score = 0.0;
};

struct Selection {
  std::size_t feature = 0;
  FeatureKind kind = FeatureKind::continuous;
  std::string model;
  double score = 0.0;
  bool cross_validated = false;
  std::vector<CandidateScore> scores;  // registry order, compatible candidates only
  std::vector<std::string> flags;
};

// Out-of-fold scoring helpers.
double r_squared(const Eigen::VectorXd& truth, const Eigen::VectorXd& pred);
double macro_f1(const Eigen::VectorXd& truth, const Eigen::VectorXd& pred);

// Fold assignment for n rows: seeded shuffle, fold = position % k.
std::vector<std::size_t> assign_folds(std::size_t n, std::size_t k, std::uint64_t seed);

Selection fit_select(const std::vector<PatientRecord>& records, std::size_t feature, const ImputerRegistry& registry);

struct ImputeResult {
  std::vector<PatientRecord> records;  // no missing cells
  std::vector<Selection> selections;   // one per feature that had missing cells
};

ImputeResult impute_all(const std::vector<PatientRecord>& records, const ImputerRegistry& registry);

}  // namespace nnynet::impute
