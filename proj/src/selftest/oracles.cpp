#include <algorithm>
#include <cmath>
#include <limits>

#include "nnynet/selftest.hpp"

namespace nnynet::selftest::oracle {

Tensor<double> matmul(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw ShapeError("oracle::matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t n = a.extent(0), k = a.extent(1), m = b.extent(1);
  Tensor<double> out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a.at(i, t) * b.at(t, j);
      out.at(i, j) = s;
    }
  }
  return out;
}

double erf_simpson(double x, std::size_t intervals) {
  if (intervals % 2 != 0) ++intervals;
  const double h = x / static_cast<double>(intervals);
  auto f = [](double t) { return std::exp(-t * t); };
  double s = f(0.0) + f(x);
  for (std::size_t i = 1; i < intervals; ++i) s += (i % 2 ? 4.0 : 2.0) * f(h * static_cast<double>(i));
  return 2.0 / std::sqrt(M_PI) * s * h / 3.0;
}

Tensor<double> dense_attention(const Tensor<double>& tokens, const swin::AttentionWeights<float>& w,
                               std::size_t window) {
  const Shape& s = tokens.shape();
  if (s.size() != 4) throw ShapeError("oracle::dense_attention: expected [X, Y, Z, C]");
  const std::size_t nx = s[0], ny = s[1], nz = s[2], c = s[3], n = nx * ny * nz;
  const std::size_t heads = w.heads, d = c / heads;
  const Tensor<float>& wqkv = w.qkv.weight.value();
  const Tensor<float>& bqkv = w.qkv.bias.value();
  const Tensor<float>& wp = w.proj.weight.value();
  const Tensor<float>& bp = w.proj.bias.value();
  const Tensor<float>& table = w.bias_table.value();
  const long span = 2 * static_cast<long>(window) - 1;

  // q/k/v[t][j] with j = head * d + e
  std::vector<std::vector<double>> q(n, std::vector<double>(c)), k = q, v = q;
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < c; ++j) {
      double sq = bqkv[j], sk = bqkv[c + j], sv = bqkv[2 * c + j];
      for (std::size_t i = 0; i < c; ++i) {
        const double x = tokens[t * c + i];
        sq += x * wqkv.at(i, j);
        sk += x * wqkv.at(i, c + j);
        sv += x * wqkv.at(i, 2 * c + j);
      }
      q[t][j] = sq;
      k[t][j] = sk;
      v[t][j] = sv;
    }
  }
  auto pos = [&](std::size_t t) {
    return std::array<long, 3>{long(t / (ny * nz)), long(t / nz % ny), long(t % nz)};
  };
  std::vector<std::vector<double>> heads_out(n, std::vector<double>(c, 0.0));
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t a = 0; a < n; ++a) {
      std::vector<double> score(n);
      double mx = -std::numeric_limits<double>::infinity();
      const auto pa = pos(a);
      for (std::size_t b = 0; b < n; ++b) {
        const auto pb = pos(b);
        double dot = 0.0;
        for (std::size_t e = 0; e < d; ++e) dot += q[a][h * d + e] * k[b][h * d + e];
        const long row = ((pa[0] - pb[0] + span / 2) * span + (pa[1] - pb[1] + span / 2)) * span +
                         (pa[2] - pb[2] + span / 2);
        score[b] = dot * inv + table.at(static_cast<std::size_t>(row), h);
        mx = std::max(mx, score[b]);
      }
      double z = 0.0;
      for (double& sc : score) z += (sc = std::exp(sc - mx));
      for (std::size_t e = 0; e < d; ++e) {
        double acc = 0.0;
        for (std::size_t b = 0; b < n; ++b) acc += score[b] / z * v[b][h * d + e];
        heads_out[a][h * d + e] = acc;
      }
    }
  }
  Tensor<double> out({nx, ny, nz, c});
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < c; ++j) {
      double acc = bp[j];
      for (std::size_t i = 0; i < c; ++i) acc += heads_out[t][i] * wp.at(i, j);
      out[t * c + j] = acc;
    }
  }
  return out;
}

Tensor<double> transposed_conv(const Tensor<double>& x, const Tensor<double>& kernel, std::size_t stride) {
  if (x.rank() != 4 || kernel.rank() != 5 || kernel.extent(1) != x.extent(0)) {
    throw ShapeError("oracle::transposed_conv: bad shapes");
  }
  const std::size_t cin = x.extent(0), cout = kernel.extent(0);
  std::array<std::size_t, 3> n{}, z{}, f{}, o{};
  for (std::size_t a = 0; a < 3; ++a) {
    n[a] = x.extent(a + 1);
    f[a] = kernel.extent(a + 2);
    z[a] = (n[a] - 1) * stride + 1;
    o[a] = z[a] + f[a] - 1;
  }
  Tensor<double> xz({cin, z[0], z[1], z[2]});
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t i = 0; i < n[0]; ++i)
      for (std::size_t j = 0; j < n[1]; ++j)
        for (std::size_t k = 0; k < n[2]; ++k) xz.at(c, i * stride, j * stride, k * stride) = x.at(c, i, j, k);

  Tensor<double> y({cout, o[0], o[1], o[2]});
  for (std::size_t oc = 0; oc < cout; ++oc)
    for (std::size_t i = 0; i < o[0]; ++i)
      for (std::size_t j = 0; j < o[1]; ++j)
        for (std::size_t k = 0; k < o[2]; ++k) {
          double acc = 0.0;
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t a = 0; a < f[0]; ++a)
              for (std::size_t b = 0; b < f[1]; ++b)
                for (std::size_t e = 0; e < f[2]; ++e) {
                  const long si = long(i) - long(a), sj = long(j) - long(b), sk = long(k) - long(e);
                  if (si < 0 || sj < 0 || sk < 0 || si >= long(z[0]) || sj >= long(z[1]) || sk >= long(z[2])) continue;
                  acc += kernel.at(oc, c, a, b, e) * xz.at(c, std::size_t(si), std::size_t(sj), std::size_t(sk));
                }
          y.at(oc, i, j, k) = acc;
        }
  return y;
}

namespace {

std::size_t rank95(std::size_t n) {
  // smallest r with r >= 0.95 n, as a zero-based index
  std::size_t r = 0;
  while (100 * r < 95 * n) ++r;
  return r - 1;
}

double directed_all_pairs(const std::vector<metrics::Voxel>& x, const std::vector<metrics::Voxel>& y,
                          const metrics::Spacing& s) {
  std::vector<double> d;
  d.reserve(x.size());
  for (const auto& p : x) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : y) {
      const double a = double(p[0] - r[0]) * s[0], b = double(p[1] - r[1]) * s[1], c = double(p[2] - r[2]) * s[2];
      best = std::min(best, (a * a + b * b) + c * c);
    }
    d.push_back(best);
  }
  std::sort(d.begin(), d.end());
  return std::sqrt(d[rank95(d.size())]);
}

std::vector<metrics::Voxel> brute_boundary(const Tensor<int>& m, int label) {
  const long nx = long(m.extent(0)), ny = long(m.extent(1)), nz = long(m.extent(2));
  std::vector<metrics::Voxel> out;
  static const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (long x = 0; x < nx; ++x)
    for (long y = 0; y < ny; ++y)
      for (long z = 0; z < nz; ++z) {
        if (m.at(x, y, z) != label) continue;
        int interior = 0;
        for (const auto& o : off) {
          const long a = x + o[0], b = y + o[1], c = z + o[2];
          if (a >= 0 && b >= 0 && c >= 0 && a < nx && b < ny && c < nz && m.at(a, b, c) == label) ++interior;
        }
        if (interior < 6) out.push_back({x, y, z});
      }
  return out;
}

}  // namespace

double hd95_all_pairs(const std::vector<metrics::Voxel>& x, const std::vector<metrics::Voxel>& y,
                      const metrics::Spacing& spacing) {
  if (x.empty() || y.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::max(directed_all_pairs(x, y, spacing), directed_all_pairs(y, x, spacing));
}

metrics::SegmentationReport brute_report(const Tensor<int>& pred, const Tensor<int>& truth, std::size_t num_classes,
                                         const metrics::Spacing& spacing) {
  metrics::SegmentationReport rep;
  const double n = static_cast<double>(pred.size());
  double sd = 0, sj = 0, sa = 0, sr = 0, sp = 0, sh = 0;
  std::size_t nh = 0;
  for (std::size_t c = 1; c < num_classes; ++c) {
    const int k = static_cast<int>(c);
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] == k, t = truth[i] == k;
      if (p && t) tp += 1;
      else if (p) fp += 1;
      else if (t) fn += 1;
      else tn += 1;
    }
    metrics::ReportRow r;
    r.name = "class" + std::to_string(c);
    r.dice = (2 * tp + fp + fn) == 0 ? 1.0 : 2 * tp / (2 * tp + fp + fn);
    r.miou = (tp + fp + fn) == 0 ? 1.0 : tp / (tp + fp + fn);
    r.accuracy = (tp + tn) / n;
    r.recall = (tp + fn) == 0 ? 0.0 : tp / (tp + fn);
    r.precision = (tp + fp) == 0 ? 0.0 : tp / (tp + fp);
    const auto bp = brute_boundary(pred, k), bt = brute_boundary(truth, k);
    if (!bp.empty() && !bt.empty()) r.hd95 = {hd95_all_pairs(bp, bt, spacing), true};
    sd += r.dice;
    sj += r.miou;
    sa += r.accuracy;
    sr += r.recall;
    sp += r.precision;
    if (r.hd95.defined) {
      sh += r.hd95.mm;
      ++nh;
    }
    rep.rows.push_back(r);
  }
  const double m = static_cast<double>(num_classes - 1);
  metrics::ReportRow t;
  t.name = "Total";
  t.dice = sd / m;
  t.miou = sj / m;
  t.accuracy = sa / m;
  t.recall = sr / m;
  t.precision = sp / m;
  if (nh > 0) t.hd95 = {sh / static_cast<double>(nh), true};
  rep.rows.push_back(t);
  return rep;
}

}  // namespace nnynet::selftest::oracle
