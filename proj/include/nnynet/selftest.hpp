#pragma once
// Independent reference implementations and the acceptance checks built on
// them. Shared by the acceptance test binary and `nnynet selftest`.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nnynet/metrics.hpp"
#include "nnynet/swin_encoder.hpp"

namespace nnynet::selftest {

struct CriterionResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

namespace oracle {

// Triple-loop [n,k]x[k,m].
Tensor<double> matmul(const Tensor<double>& a, const Tensor<double>& b);

// Composite Simpson quadrature of (2/sqrt(pi)) * int_0^x exp(-t^2) dt.
double erf_simpson(double x, std::size_t intervals = 20000);

// Full self-attention over every token of a [X, Y, Z, C] grid, with the
// relative position bias looked up for a table built for window M.
// Computed in double from the layer's weights.
Tensor<double> dense_attention(const Tensor<double>& tokens, const swin::AttentionWeights<float>& w, std::size_t window);

// Zero-insert x by `stride`, then Y[o][i] = sum_c sum_a K[o][c][a] * X~[c][i - a].
Tensor<double> transposed_conv(const Tensor<double>& x, const Tensor<double>& kernel, std::size_t stride);

// Symmetric 95th percentile Hausdorff distance by all-pairs search.
double hd95_all_pairs(const std::vector<metrics::Voxel>& x, const std::vector<metrics::Voxel>& y,
                      const metrics::Spacing& spacing);

// Report rebuilt from per-voxel loops over the definitions.
metrics::SegmentationReport brute_report(const Tensor<int>& pred, const Tensor<int>& truth, std::size_t num_classes,
                                         const metrics::Spacing& spacing);

}  // namespace oracle

struct GradCheckOptions {
  double h = 1e-5;
  std::size_t max_per_leaf = 48;  // coordinates sampled per leaf; all when smaller
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // leaf/coordinate of the worst entry
};

// Compares reverse-mode gradients of sum(R * f()) against central
// differences over the given leaves; R is a fixed seeded projection.
// f must rebuild its graph from the current leaf values on every call.
GradCheckResult gradcheck(const std::function<Var<double>()>& f, const std::vector<Var<double>>& leaves,
                          const GradCheckOptions& opts = {});

// Relative error |a - n| / max(|a|, |n|, 1e-5).
double relative_error(double analytic, double numeric);

CriterionResult gradient_suite(std::size_t seeds = 20);
CriterionResult attention_oracle();
CriterionResult transposed_conv_oracle();
CriterionResult loss_identities();
CriterionResult metric_oracle();
CriterionResult structural_roundtrips();
CriterionResult sliding_window_determinism();
CriterionResult end_to_end_overfit(std::uint64_t seed = 0);
CriterionResult fusion_ablation_harness();
CriterionResult postprocessing_fixtures();

// Every check in order; the overfit run is skipped unless requested.
std::vector<CriterionResult> run_all(bool include_overfit,
                                     const std::function<void(const CriterionResult&)>& on_result = {});

std::string format_result(const CriterionResult& r);

}  // namespace nnynet::selftest
