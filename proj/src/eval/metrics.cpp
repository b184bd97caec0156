#include "nnynet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace nnynet::metrics {

namespace {

void require_volume(const LabelGrid& m, const char* who) {
  if (m.rank() != 3) throw ShapeError(std::string(who) + ": label mask must be 3-D, got " + shape_str(m.shape()));
}

Rate ratio(std::uint64_t num, std::uint64_t den, double empty_value) {
  if (den == 0) return {empty_value, true};
  return {static_cast<double>(num) / static_cast<double>(den), false};
}

}  // namespace

ConfusionCounts confusion(const LabelGrid& pred, const LabelGrid& truth, std::size_t num_classes) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("confusion: prediction " + shape_str(pred.shape()) + " vs truth " + shape_str(truth.shape()));
  }
  // joint[p * C + t] histogram, then one-vs-rest counts from its margins
  std::vector<std::uint64_t> joint(num_classes * num_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], t = truth[i];
    if (p < 0 || t < 0 || static_cast<std::size_t>(p) >= num_classes || static_cast<std::size_t>(t) >= num_classes) {
      throw std::out_of_range("confusion: label outside [0, " + std::to_string(num_classes) + ") at voxel " +
                              std::to_string(i));
    }
    ++joint[static_cast<std::size_t>(p) * num_classes + static_cast<std::size_t>(t)];
  }
  ConfusionCounts out;
  out.voxels = pred.size();
  out.per_class.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::uint64_t pred_c = 0, truth_c = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      pred_c += joint[c * num_classes + k];
      truth_c += joint[k * num_classes + c];
    }
    ClassCounts& cc = out.per_class[c];
    cc.tp = joint[c * num_classes + c];
    cc.fp = pred_c - cc.tp;
    cc.fn = truth_c - cc.tp;
    cc.tn = out.voxels - cc.tp - cc.fp - cc.fn;
  }
  return out;
}

Rate dice(const ConfusionCounts& counts, std::size_t c) {
  const ClassCounts& k = counts.per_class.at(c);
  return ratio(2 * k.tp, 2 * k.tp + k.fp + k.fn, 1.0);
}

Rate iou(const ConfusionCounts& counts, std::size_t c) {
  const ClassCounts& k = counts.per_class.at(c);
  return ratio(k.tp, k.tp + k.fp + k.fn, 1.0);
}

double mean_iou(const ConfusionCounts& counts, const std::vector<std::size_t>& classes) {
  if (classes.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t c : classes) s += iou(counts, c).value;
  return s / static_cast<double>(classes.size());
}

AccRecallPrecision acc_recall_precision(const ConfusionCounts& counts, std::size_t c) {
  const ClassCounts& k = counts.per_class.at(c);
  return {ratio(k.tp + k.tn, k.total(), 0.0), ratio(k.tp, k.tp + k.fn, 0.0), ratio(k.tp, k.tp + k.fp, 0.0)};
}

std::vector<Voxel> boundary(const LabelGrid& mask, int label) {
  require_volume(mask, "boundary");
  const auto nx = static_cast<std::int64_t>(mask.extent(0));
  const auto ny = static_cast<std::int64_t>(mask.extent(1));
  const auto nz = static_cast<std::int64_t>(mask.extent(2));
  auto at = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    return mask[static_cast<std::size_t>((x * ny + y) * nz + z)];
  };
  auto outside = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    return x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz || at(x, y, z) != label;
  };
  std::vector<Voxel> out;
  for (std::int64_t x = 0; x < nx; ++x) {
    for (std::int64_t y = 0; y < ny; ++y) {
      for (std::int64_t z = 0; z < nz; ++z) {
        if (at(x, y, z) != label) continue;
        if (outside(x - 1, y, z) || outside(x + 1, y, z) || outside(x, y - 1, z) || outside(x, y + 1, z) ||
            outside(x, y, z - 1) || outside(x, y, z + 1)) {
          out.push_back({x, y, z});
        }
      }
    }
  }
  return out;
}

double squared_distance(const Voxel& a, const Voxel& b, const Spacing& s) {
  const double d0 = static_cast<double>(a[0] - b[0]) * s[0];
  const double d1 = static_cast<double>(a[1] - b[1]) * s[1];
  const double d2 = static_cast<double>(a[2] - b[2]) * s[2];
  return (d0 * d0 + d1 * d1) + d2 * d2;
}

KdTree::KdTree(std::vector<Voxel> points, Spacing spacing) : points_(std::move(points)), spacing_(spacing) {
  std::vector<std::size_t> order(points_.size());
  std::iota(order.begin(), order.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(0, order.size(), 0, order);
}

std::int32_t KdTree::build(std::size_t lo, std::size_t hi, std::size_t depth, std::vector<std::size_t>& order) {
  if (lo >= hi) return -1;
  const auto axis = static_cast<std::uint8_t>(depth % 3);
  const std::size_t mid = lo + (hi - lo) / 2;
  std::nth_element(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(mid),
                   order.begin() + static_cast<std::ptrdiff_t>(hi), [&](std::size_t a, std::size_t b) {
                     return points_[a][axis] < points_[b][axis] || (points_[a][axis] == points_[b][axis] && a < b);
                   });
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({order[mid], -1, -1, axis});
  const std::int32_t left = build(lo, mid, depth + 1, order);
  const std::int32_t right = build(mid + 1, hi, depth + 1, order);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

void KdTree::search(std::int32_t node, const Voxel& q, double& best) const {
  if (node < 0) return;
  const NodeRec& n = nodes_[static_cast<std::size_t>(node)];
  const Voxel& p = points_[n.point];
  best = std::min(best, squared_distance(q, p, spacing_));
  const double diff = static_cast<double>(q[n.axis] - p[n.axis]) * spacing_[n.axis];
  const std::int32_t near = diff < 0 ? n.left : n.right;
  const std::int32_t far = diff < 0 ? n.right : n.left;
  search(near, q, best);
  if (diff * diff <= best) search(far, q, best);
}

double KdTree::nearest_sq(const Voxel& q) const {
  if (root_ < 0) throw ContractError("KdTree: nearest query on an empty set");
  double best = std::numeric_limits<double>::infinity();
  search(root_, q, best);
  return best;
}

std::size_t nearest_rank_95(std::size_t n) {
  if (n == 0) throw ContractError("nearest_rank_95: empty sample");
  return (95 * n + 99) / 100 - 1;
}

double directed_hd95(const std::vector<Voxel>& x, const std::vector<Voxel>& y, const Spacing& spacing) {
  if (x.empty() || y.empty()) throw ContractError("directed_hd95: empty point set");
  const KdTree tree(y, spacing);
  std::vector<double> d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = tree.nearest_sq(x[i]);
  const std::size_t k = nearest_rank_95(d.size());
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  return std::sqrt(d[k]);
}

Distance hd95(const std::vector<Voxel>& x, const std::vector<Voxel>& y, const Spacing& spacing) {
  if (x.empty() || y.empty()) return {0.0, false};
  return {std::max(directed_hd95(x, y, spacing), directed_hd95(y, x, spacing)), true};
}

Distance hd95(const LabelGrid& pred, const LabelGrid& truth, int c, const Spacing& spacing) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("hd95: prediction " + shape_str(pred.shape()) + " vs truth " + shape_str(truth.shape()));
  }
  return hd95(boundary(pred, c), boundary(truth, c), spacing);
}

const std::vector<std::string>& SegmentationReport::columns() {
  static const std::vector<std::string> cols{"Class", "Dice", "MIoU", "HD95", "Accuracy", "Recall", "Precision"};
  return cols;
}

std::string SegmentationReport::to_delimited(char sep) const {
  std::ostringstream os;
  const auto& cols = columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? std::string(1, sep) : "") << cols[i];
  os << '\n' << std::setprecision(6) << std::fixed;
  for (const ReportRow& r : rows) {
    os << r.name << sep << r.dice << sep << r.miou << sep;
    if (r.hd95.defined) {
      os << r.hd95.mm;
    } else {
      os << "nan";
    }
    os << sep << r.accuracy << sep << r.recall << sep << r.precision << '\n';
  }
  return os.str();
}

std::string SegmentationReport::to_json() const {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const ReportRow& r : rows) {
    nlohmann::ordered_json o;
    o["Class"] = r.name;
    o["Dice"] = r.dice;
    o["MIoU"] = r.miou;
    o["HD95"] = r.hd95.defined ? nlohmann::ordered_json(r.hd95.mm) : nlohmann::ordered_json(nullptr);
    o["Accuracy"] = r.accuracy;
    o["Recall"] = r.recall;
    o["Precision"] = r.precision;
    if (!r.flags.empty()) o["flags"] = r.flags;
    arr.push_back(std::move(o));
  }
  return arr.dump(2);
}

namespace {

ReportRow mean_row(const std::string& name, const std::vector<const ReportRow*>& rows) {
  ReportRow t;
  t.name = name;
  if (rows.empty()) return t;
  double hd_sum = 0.0;
  std::size_t hd_n = 0;
  for (const ReportRow* r : rows) {
    t.dice += r->dice;
    t.miou += r->miou;
    t.accuracy += r->accuracy;
    t.recall += r->recall;
    t.precision += r->precision;
    if (r->hd95.defined) {
      hd_sum += r->hd95.mm;
      ++hd_n;
    }
  }
  const auto n = static_cast<double>(rows.size());
  t.dice /= n;
  t.miou /= n;
  t.accuracy /= n;
  t.recall /= n;
  t.precision /= n;
  if (hd_n > 0) {
    t.hd95 = {hd_sum / static_cast<double>(hd_n), true};
    if (hd_n < rows.size()) {
      t.flags.push_back("hd95 averaged over " + std::to_string(hd_n) + " of " + std::to_string(rows.size()) +
                        " entries");
    }
  } else {
    t.flags.push_back("hd95 undefined for all entries");
  }
  return t;
}

}  // namespace

SegmentationReport report(const LabelGrid& pred, const LabelGrid& truth, std::size_t num_classes, const Spacing& spacing,
                          const std::vector<std::string>& class_names) {
  require_volume(pred, "report");
  if (num_classes < 2) throw ContractError("report: at least two classes required");
  if (!class_names.empty() && class_names.size() != num_classes - 1) {
    throw ContractError("report: expected " + std::to_string(num_classes - 1) + " class names");
  }
  const ConfusionCounts counts = confusion(pred, truth, num_classes);
  SegmentationReport rep;
  for (std::size_t c = 1; c < num_classes; ++c) {
    ReportRow r;
    r.name = class_names.empty() ? "class" + std::to_string(c) : class_names[c - 1];
    const Rate d = dice(counts, c), j = iou(counts, c);
    const AccRecallPrecision arp = acc_recall_precision(counts, c);
    r.dice = d.value;
    r.miou = j.value;
    r.accuracy = arp.accuracy.value;
    r.recall = arp.recall.value;
    r.precision = arp.precision.value;
    if (d.flagged) r.flags.push_back("class absent from prediction and truth");
    if (arp.recall.flagged) r.flags.push_back("recall 0/0");
    if (arp.precision.flagged) r.flags.push_back("precision 0/0");
    r.hd95 = hd95(pred, truth, static_cast<int>(c), spacing);
    if (!r.hd95.defined) r.flags.push_back("hd95 undefined (empty surface)");
    rep.rows.push_back(std::move(r));
  }
  std::vector<const ReportRow*> ptrs;
  for (const ReportRow& r : rep.rows) ptrs.push_back(&r);
  ReportRow total = mean_row("Total", ptrs);
  rep.rows.push_back(std::move(total));
  return rep;
}

SegmentationReport average_reports(const std::vector<SegmentationReport>& reports) {
  if (reports.empty()) throw ContractError("average_reports: no reports");
  SegmentationReport out;
  const std::size_t nrows = reports.front().rows.size();
  for (const auto& r : reports) {
    if (r.rows.size() != nrows) throw ContractError("average_reports: row layouts differ");
  }
  for (std::size_t i = 0; i < nrows; ++i) {
    std::vector<const ReportRow*> ptrs;
    for (const auto& r : reports) ptrs.push_back(&r.rows[i]);
    out.rows.push_back(mean_row(reports.front().rows[i].name, ptrs));
  }
  return out;
}

}  // namespace nnynet::metrics
