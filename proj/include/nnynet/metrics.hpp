#pragma once
// Segmentation metrics over integer label volumes: one-vs-rest confusion
// counts, Dice/IoU, accuracy/recall/precision, and the symmetric 95th
// percentile Hausdorff distance between boundary voxel sets.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nnynet/tensor.hpp"

namespace nnynet::metrics {

using LabelGrid = Tensor<int>;  // [X, Y, Z]
using Spacing = std::array<double, 3>;
using Voxel = std::array<std::int64_t, 3>;

struct ClassCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::uint64_t total() const { return tp + tn + fp + fn; }
};

struct ConfusionCounts {
  std::vector<ClassCounts> per_class;
  std::uint64_t voxels = 0;
};

// A ratio with a flag marking the conventional value used for 0/0.
struct Rate {
  double value = 0.0;
  bool flagged = false;
};

struct AccRecallPrecision {
  Rate accuracy, recall, precision;
};

struct Distance {
  double mm = 0.0;
  bool defined = false;
};

ConfusionCounts confusion(const LabelGrid& pred, const LabelGrid& truth, std::size_t num_classes);

// 2TP / (2TP + FP + FN); 1.0 (flagged) when the class is absent from both.
Rate dice(const ConfusionCounts& counts, std::size_t c);
// TP / (TP + FP + FN); 1.0 (flagged) when the class is absent from both.
Rate iou(const ConfusionCounts& counts, std::size_t c);
// Mean IoU over the listed classes.
double mean_iou(const ConfusionCounts& counts, const std::vector<std::size_t>& classes);
AccRecallPrecision acc_recall_precision(const ConfusionCounts& counts, std::size_t c);

// Voxels of `label` with at least one face neighbour outside the label
// (the volume exterior counts as outside). Ordered by linear index.
std::vector<Voxel> boundary(const LabelGrid& mask, int label);

// Exact nearest-neighbour queries in physical (spacing-scaled) space.
class KdTree {
 public:
  KdTree(std::vector<Voxel> points, Spacing spacing);
  // Squared distance to the nearest point; the tree must be nonempty.
  double nearest_sq(const Voxel& q) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct NodeRec {
    std::size_t point;
    std::int32_t left = -1, right = -1;
    std::uint8_t axis = 0;
  };
  std::int32_t build(std::size_t lo, std::size_t hi, std::size_t depth, std::vector<std::size_t>& order);
  void search(std::int32_t node, const Voxel& q, double& best) const;

  std::vector<Voxel> points_;
  Spacing spacing_;
  std::vector<NodeRec> nodes_;
  std::int32_t root_ = -1;
};

// ((dx*sx)^2 + (dy*sy)^2) + (dz*sz)^2
double squared_distance(const Voxel& a, const Voxel& b, const Spacing& spacing);

// Nearest-rank 95th percentile index: ceil(0.95 n) - 1.
std::size_t nearest_rank_95(std::size_t n);

// 95th percentile of nearest distances from each point of x to y.
double directed_hd95(const std::vector<Voxel>& x, const std::vector<Voxel>& y, const Spacing& spacing);
// max of both directed terms; undefined when either set is empty.
Distance hd95(const std::vector<Voxel>& x, const std::vector<Voxel>& y, const Spacing& spacing);
// hd95 between the boundaries of class c in pred and truth.
Distance hd95(const LabelGrid& pred, const LabelGrid& truth, int c, const Spacing& spacing);

struct ReportRow {
  std::string name;
  double dice = 0, miou = 0;
  Distance hd95;
  double accuracy = 0, recall = 0, precision = 0;
  std::vector<std::string> flags;
};

struct SegmentationReport {
  std::vector<ReportRow> rows;  // classes 1..C-1, then "Total"

  static const std::vector<std::string>& columns();
  const ReportRow& total() const { return rows.back(); }
  // Delimited table, header first; undefined HD95 prints as "nan".
  std::string to_delimited(char sep = ',') const;
  // JSON array, one object per row.
  std::string to_json() const;
};

// Per-class rows for classes 1..C-1 (named "class<k>" unless names given)
// plus an unweighted-mean Total row; Total HD95 averages defined entries.
SegmentationReport report(const LabelGrid& pred, const LabelGrid& truth, std::size_t num_classes, const Spacing& spacing,
                          const std::vector<std::string>& class_names = {});

// Mean of several reports with identical row layout.
SegmentationReport average_reports(const std::vector<SegmentationReport>& reports);

}  // namespace nnynet::metrics
