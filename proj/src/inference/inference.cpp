#include "nnynet/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <thread>

namespace nnynet::inference {

void SlidingWindowPlan::validate() const {
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ContractError("sliding window: overlap must lie in [0, 1)");
  for (std::size_t e : patch) {
    if (e == 0) throw ContractError("sliding window: patch extent must be positive");
  }
}

Extent3 SlidingWindowPlan::stride() const {
  Extent3 s{};
  for (std::size_t a = 0; a < 3; ++a) {
    const double r = std::round(static_cast<double>(patch[a]) * (1.0 - overlap));
    s[a] = std::max<std::size_t>(1, static_cast<std::size_t>(r));
  }
  return s;
}

std::vector<Extent3> plan_windows(const Shape& volume, const SlidingWindowPlan& plan) {
  plan.validate();
  if (volume.size() != 3) throw ShapeError("plan_windows: expected a 3-D volume, got " + shape_str(volume));
  const Extent3 stride = plan.stride();
  std::array<std::vector<std::size_t>, 3> axis;
  for (std::size_t a = 0; a < 3; ++a) {
    if (volume[a] <= plan.patch[a]) {
      axis[a] = {0};
      continue;
    }
    const std::size_t last = volume[a] - plan.patch[a];
    for (std::size_t o = 0; o < last; o += stride[a]) axis[a].push_back(o);
    axis[a].push_back(last);
  }
  std::vector<Extent3> out;
  for (std::size_t x : axis[0]) {
    for (std::size_t y : axis[1]) {
      for (std::size_t z : axis[2]) out.push_back({x, y, z});
    }
  }
  return out;
}

Tensor<int> coverage(const Shape& volume, const SlidingWindowPlan& plan) {
  Tensor<int> c(volume, 0);
  for (const Extent3& o : plan_windows(volume, plan)) {
    for (std::size_t x = o[0]; x < std::min(volume[0], o[0] + plan.patch[0]); ++x) {
      for (std::size_t y = o[1]; y < std::min(volume[1], o[1] + plan.patch[1]); ++y) {
        for (std::size_t z = o[2]; z < std::min(volume[2], o[2] + plan.patch[2]); ++z) ++c.at(x, y, z);
      }
    }
  }
  return c;
}

template <typename T>
Tensor<T> sliding_predict(const Tensor<T>& volume, const WindowModel<T>& model, const SlidingWindowPlan& plan,
                          const SlidingOptions& options) {
  if (volume.rank() != 3) throw ShapeError("sliding_predict: expected [X, Y, Z], got " + shape_str(volume.shape()));
  const Shape& vs = volume.shape();
  const Shape padded{std::max(vs[0], plan.patch[0]), std::max(vs[1], plan.patch[1]), std::max(vs[2], plan.patch[2])};
  Tensor<T> src = volume;
  if (padded != vs) {
    src = Tensor<T>(padded, T(0));
    for (std::size_t x = 0; x < vs[0]; ++x) {
      for (std::size_t y = 0; y < vs[1]; ++y) {
        for (std::size_t z = 0; z < vs[2]; ++z) src.at(x, y, z) = volume.at(x, y, z);
      }
    }
  }
  const std::vector<Extent3> origins = plan_windows(padded, plan);
  const std::size_t n = origins.size();
  std::vector<std::size_t> order = options.order;
  if (order.empty()) {
    order.resize(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
  }
  {
    std::vector<std::size_t> check = order;
    std::sort(check.begin(), check.end());
    bool ok = check.size() == n;
    for (std::size_t i = 0; ok && i < n; ++i) ok = check[i] == i;
    if (!ok) throw ContractError("sliding_predict: order must be a permutation of the window indices");
  }

  const Shape ps{plan.patch[0], plan.patch[1], plan.patch[2]};
  std::vector<Tensor<T>> results(n);
  auto run = [&](std::size_t w) {
    const Extent3& o = origins[w];
    Tensor<T> patch(ps, T(0));
    for (std::size_t x = 0; x < ps[0]; ++x) {
      for (std::size_t y = 0; y < ps[1]; ++y) {
        for (std::size_t z = 0; z < ps[2]; ++z) patch.at(x, y, z) = src.at(o[0] + x, o[1] + y, o[2] + z);
      }
    }
    Tensor<T> out = model(patch, w);
    if (out.rank() != 4 || out.extent(1) != ps[0] || out.extent(2) != ps[1] || out.extent(3) != ps[2]) {
      throw ShapeError("sliding_predict: model returned " + shape_str(out.shape()) + " for patch " + shape_str(ps));
    }
    results[w] = std::move(out);
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, n));
  if (threads == 1) {
    for (std::size_t w : order) run(w);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = next++; i < n; i = next++) run(order[i]);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  const std::size_t k = results.front().extent(0);
  for (const auto& r : results) {
    if (r.extent(0) != k) throw ShapeError("sliding_predict: windows disagree on class count");
  }
  Tensor<T> sum({k, padded[0], padded[1], padded[2]}, T(0));
  Tensor<int> count(padded, 0);
  for (std::size_t w = 0; w < n; ++w) {
    const Extent3& o = origins[w];
    for (std::size_t x = 0; x < ps[0]; ++x) {
      for (std::size_t y = 0; y < ps[1]; ++y) {
        for (std::size_t z = 0; z < ps[2]; ++z) {
          ++count.at(o[0] + x, o[1] + y, o[2] + z);
          for (std::size_t c = 0; c < k; ++c) sum.at(c, o[0] + x, o[1] + y, o[2] + z) += results[w].at(c, x, y, z);
        }
      }
    }
  }
  Tensor<T> out({k, vs[0], vs[1], vs[2]}, T(0));
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t x = 0; x < vs[0]; ++x) {
      for (std::size_t y = 0; y < vs[1]; ++y) {
        for (std::size_t z = 0; z < vs[2]; ++z) {
          out.at(c, x, y, z) = sum.at(c, x, y, z) / static_cast<T>(count.at(x, y, z));
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<int> argmax(const Tensor<T>& logits) {
  if (logits.rank() != 4) throw ShapeError("argmax: expected [K, X, Y, Z], got " + shape_str(logits.shape()));
  const std::size_t k = logits.extent(0);
  const std::size_t n = logits.size() / k;
  Tensor<int> out({logits.extent(1), logits.extent(2), logits.extent(3)}, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits[c * n + i] > logits[best * n + i]) best = c;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

void ComponentPolicy::validate() const {
  if (connectivity != 6 && connectivity != 26) throw ContractError("components: connectivity must be 6 or 26");
  if (min_size < 1) throw ContractError("components: min_size must be at least 1");
}

namespace {

struct Grid {
  std::int64_t nx, ny, nz;
  explicit Grid(const Shape& s)
      : nx(static_cast<std::int64_t>(s[0])), ny(static_cast<std::int64_t>(s[1])), nz(static_cast<std::int64_t>(s[2])) {}

  // Calls f(neighbour linear index) for each in-bounds neighbour.
  template <typename F>
  void neighbours(std::size_t i, int connectivity, F&& f) const {
    const auto li = static_cast<std::int64_t>(i);
    const std::int64_t x = li / (ny * nz), y = (li / nz) % ny, z = li % nz;
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const int manhattan = static_cast<int>(std::abs(dx) + std::abs(dy) + std::abs(dz));
          if (manhattan == 0 || (connectivity == 6 && manhattan != 1)) continue;
          const std::int64_t a = x + dx, b = y + dy, c = z + dz;
          if (a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz) continue;
          f(static_cast<std::size_t>((a * ny + b) * nz + c));
        }
      }
    }
  }
};

}  // namespace

std::vector<Component> components(const Tensor<int>& mask, const ComponentPolicy& policy) {
  policy.validate();
  if (mask.rank() != 3) throw ShapeError("components: expected a 3-D mask, got " + shape_str(mask.shape()));
  const Grid g(mask.shape());
  std::vector<char> seen(mask.size(), 0);
  std::vector<Component> out;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (seen[start]) continue;
    Component c;
    c.label = mask[start];
    seen[start] = 1;
    stack.assign(1, start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      c.voxels.push_back(i);
      g.neighbours(i, policy.connectivity, [&](std::size_t j) {
        if (!seen[j] && mask[j] == c.label) {
          seen[j] = 1;
          stack.push_back(j);
        }
      });
    }
    std::sort(c.voxels.begin(), c.voxels.end());
    c.size = c.voxels.size();
    out.push_back(std::move(c));
  }
  return out;
}

Tensor<int> merge_small(const Tensor<int>& mask, const ComponentPolicy& policy) {
  std::vector<Component> comps = components(mask, policy);
  std::map<int, std::size_t> per_label;
  for (const auto& c : comps) ++per_label[c.label];
  std::vector<std::size_t> small;
  for (std::size_t i = 0; i < comps.size(); ++i) {
    if (comps[i].size < policy.min_size) small.push_back(i);
  }
  std::stable_sort(small.begin(), small.end(), [&](std::size_t a, std::size_t b) { return comps[a].size < comps[b].size; });

  Tensor<int> out = mask;
  const Grid g(mask.shape());
  std::vector<std::size_t> stamp(mask.size(), 0);  // marks voxels of / around the current component
  std::size_t tick = 0;
  for (std::size_t idx : small) {
    const Component& c = comps[idx];
    if (per_label[c.label] <= 1) continue;
    ++tick;
    for (std::size_t v : c.voxels) stamp[v] = tick;
    std::map<int, std::size_t> votes;
    for (std::size_t v : c.voxels) {
      g.neighbours(v, 26, [&](std::size_t j) {
        if (stamp[j] == tick) return;
        stamp[j] = tick;
        ++votes[out[j]];
      });
    }
    if (votes.empty()) continue;
    int best = votes.begin()->first;
    std::size_t best_n = 0;
    for (const auto& [label, n] : votes) {
      if (n > best_n) {
        best = label;
        best_n = n;
      }
    }
    if (best == c.label) continue;
    for (std::size_t v : c.voxels) out[v] = best;
    --per_label[c.label];
  }
  return out;
}

template Tensor<float> sliding_predict(const Tensor<float>&, const WindowModel<float>&, const SlidingWindowPlan&,
                                       const SlidingOptions&);
template Tensor<double> sliding_predict(const Tensor<double>&, const WindowModel<double>&, const SlidingWindowPlan&,
                                        const SlidingOptions&);
template Tensor<int> argmax(const Tensor<float>&);
template Tensor<int> argmax(const Tensor<double>&);

}  // namespace nnynet::inference
