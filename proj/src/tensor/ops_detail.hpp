#pragma once
// Shared machinery for the op implementations. Not installed.

#include <limits>
#include <string>
#include <vector>

#include "nnynet/ops.hpp"

namespace nnynet::detail {

inline constexpr std::size_t kNoSource = std::numeric_limits<std::size_t>::max();

// Calls f(index, flat) for every multi-index of `shape` in row-major order.
template <typename F>
void for_each_index(const Shape& shape, F&& f) {
  const std::size_t n = shape_numel(shape);
  if (n == 0) return;
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    f(static_cast<const std::vector<std::size_t>&>(idx), flat);
    for (std::size_t ax = shape.size(); ax-- > 0;) {
      if (++idx[ax] < shape[ax]) break;
      idx[ax] = 0;
    }
  }
}

// Source offset into `in` for every element of the broadcast shape `out`.
inline std::vector<std::size_t> broadcast_offsets(const Shape& in, const Shape& out) {
  const std::size_t lead = out.size() - in.size();
  const Shape in_strides = row_major_strides(in);
  std::vector<std::size_t> strides(out.size(), 0);
  for (std::size_t i = 0; i < in.size(); ++i) strides[lead + i] = in[i] == 1 ? 0 : in_strides[i];
  std::vector<std::size_t> offsets(shape_numel(out));
  for_each_index(out, [&](const std::vector<std::size_t>& idx, std::size_t flat) {
    std::size_t off = 0;
    for (std::size_t ax = 0; ax < idx.size(); ++ax) off += idx[ax] * strides[ax];
    offsets[flat] = off;
  });
  return offsets;
}

// out[i] = x[map[i]] (or 0 where map[i] == kNoSource). Backward scatter-adds
// through the same map, so every pure data-movement op is expressed this way.
template <typename T>
Var<T> gather(std::string_view name, const Var<T>& x, Shape out_shape, std::vector<std::size_t> map) {
  Tensor<T> out(std::move(out_shape));
  const Tensor<T>& xv = x.value();
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = map[i] == kNoSource ? T{} : xv[map[i]];
  return Var<T>::from_op(name, std::move(out), {x},
                         [map = std::move(map)](const Tensor<T>& g, GradSink<T>& sink) {
                           if (!sink.wants(0)) return;
                           Tensor<T>& gx = sink.buffer(0);
                           for (std::size_t i = 0; i < map.size(); ++i) {
                             if (map[i] != kNoSource) gx[map[i]] += g[i];
                           }
                         });
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

}  // namespace nnynet::detail

#define NNYNET_INSTANTIATE_FOR_FLOATS(MACRO) \
  MACRO(float)                              \
  MACRO(double)
