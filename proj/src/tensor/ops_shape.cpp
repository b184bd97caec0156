#include <numeric>

#include "ops_detail.hpp"

namespace nnynet {

using detail::kNoSource;
using detail::require;

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  require(shape_numel(shape) == x.value().size(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return Var<T>::from_op("reshape", std::move(out), {x}, [](const Tensor<T>& g, detail::GradSink<T>& sink) {
    if (!sink.wants(0)) return;
    Tensor<T>& gx = sink.buffer(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  require(axes.size() == in.size(), "permute: axes do not match rank of " + shape_str(in));
  std::vector<bool> used(in.size(), false);
  for (std::size_t a : axes) {
    require(a < in.size() && !used[a], "permute: axes are not a permutation");
    used[a] = true;
  }
  const Shape in_strides = row_major_strides(in);
  Shape out(in.size());
  std::vector<std::size_t> strides(in.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    out[i] = in[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  std::vector<std::size_t> map(shape_numel(out));
  detail::for_each_index(out, [&](const std::vector<std::size_t>& idx, std::size_t flat) {
    std::size_t off = 0;
    for (std::size_t ax = 0; ax < idx.size(); ++ax) off += idx[ax] * strides[ax];
    map[flat] = off;
  });
  return detail::gather("permute", x, std::move(out), std::move(map));
}

template <typename T>
Var<T> expand(const Var<T>& x, const Shape& shape) {
  require(broadcast_shapes(x.shape(), shape) == shape,
          "expand: " + shape_str(x.shape()) + " does not broadcast to " + shape_str(shape));
  return detail::gather("expand", x, shape, detail::broadcast_offsets(x.shape(), shape));
}

template <typename T>
Var<T> pad(const Var<T>& x, const std::vector<std::size_t>& before, const std::vector<std::size_t>& after) {
  const Shape& in = x.shape();
  require(before.size() == in.size() && after.size() == in.size(), "pad: widths do not match rank of " + shape_str(in));
  Shape out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] + before[i] + after[i];
  const Shape in_strides = row_major_strides(in);
  std::vector<std::size_t> map(shape_numel(out));
  detail::for_each_index(out, [&](const std::vector<std::size_t>& idx, std::size_t flat) {
    std::size_t off = 0;
    for (std::size_t ax = 0; ax < idx.size(); ++ax) {
      if (idx[ax] < before[ax] || idx[ax] >= before[ax] + in[ax]) {
        map[flat] = kNoSource;
        return;
      }
      off += (idx[ax] - before[ax]) * in_strides[ax];
    }
    map[flat] = off;
  });
  return detail::gather("pad", x, std::move(out), std::move(map));
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& in = x.shape();
  require(axis < in.size(), "slice: axis out of range for " + shape_str(in));
  require(start + length <= in[axis], "slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                          ") exceeds extent " + std::to_string(in[axis]));
  Shape out = in;
  out[axis] = length;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  std::vector<std::size_t> map;
  map.reserve(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < length; ++a) {
      const std::size_t base = (o * in[axis] + start + a) * inner;
      for (std::size_t i = 0; i < inner; ++i) map.push_back(base + i);
    }
  }
  return detail::gather("slice", x, std::move(out), std::move(map));
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis) {
  require(!xs.empty(), "concat: no inputs");
  const Shape& first = xs.front().shape();
  require(axis < first.size(), "concat: axis out of range for " + shape_str(first));
  Shape out = first;
  out[axis] = 0;
  for (const Var<T>& v : xs) {
    Shape s = v.shape();
    require(s.size() == first.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      require(i == axis || s[i] == first[i], "concat: " + shape_str(s) + " vs " + shape_str(first));
    }
    out[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];

  Tensor<T> value(out);
  std::vector<std::size_t> offsets;  // start along `axis` of each input
  std::size_t at = 0;
  for (const Var<T>& v : xs) {
    offsets.push_back(at);
    const std::size_t len = v.shape()[axis];
    const Tensor<T>& src = v.value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.data().begin() + o * len * inner, len * inner,
                  value.data().begin() + (o * out[axis] + at) * inner);
    }
    at += len;
  }
  std::vector<std::size_t> lens;
  for (const Var<T>& v : xs) lens.push_back(v.shape()[axis]);
  const std::size_t total = out[axis];
  return Var<T>::from_op("concat", std::move(value), xs,
                         [offsets, lens, outer, inner, total](const Tensor<T>& g, detail::GradSink<T>& sink) {
                           for (std::size_t p = 0; p < lens.size(); ++p) {
                             if (!sink.wants(p)) continue;
                             Tensor<T>& gx = sink.buffer(p);
                             for (std::size_t o = 0; o < outer; ++o) {
                               const std::size_t src = (o * total + offsets[p]) * inner;
                               const std::size_t dst = o * lens[p] * inner;
                               for (std::size_t i = 0; i < lens[p] * inner; ++i) gx[dst + i] += g[src + i];
                             }
                           }
                         });
}

template <typename T>
Var<T> roll(const Var<T>& x, const std::vector<long>& shifts) {
  const Shape& in = x.shape();
  require(shifts.size() == in.size(), "roll: shifts do not match rank of " + shape_str(in));
  const Shape strides = row_major_strides(in);
  std::vector<std::size_t> map(shape_numel(in));
  detail::for_each_index(in, [&](const std::vector<std::size_t>& idx, std::size_t flat) {
    std::size_t off = 0;
    for (std::size_t ax = 0; ax < idx.size(); ++ax) {
      const long n = static_cast<long>(in[ax]);
      long src = (static_cast<long>(idx[ax]) - shifts[ax]) % n;
      if (src < 0) src += n;
      off += static_cast<std::size_t>(src) * strides[ax];
    }
    map[flat] = off;
  });
  return detail::gather("roll", x, in, std::move(map));
}

template <typename T>
Var<T> flip(const Var<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  std::vector<bool> flipped(in.size(), false);
  for (std::size_t a : axes) {
    require(a < in.size(), "flip: axis out of range for " + shape_str(in));
    flipped[a] = true;
  }
  const Shape strides = row_major_strides(in);
  std::vector<std::size_t> map(shape_numel(in));
  detail::for_each_index(in, [&](const std::vector<std::size_t>& idx, std::size_t flat) {
    std::size_t off = 0;
    for (std::size_t ax = 0; ax < idx.size(); ++ax) {
      off += (flipped[ax] ? in[ax] - 1 - idx[ax] : idx[ax]) * strides[ax];
    }
    map[flat] = off;
  });
  return detail::gather("flip", x, in, std::move(map));
}

template <typename T>
Var<T> zero_insert(const Var<T>& x, std::size_t first_axis, std::size_t stride) {
  const Shape& in = x.shape();
  require(stride >= 1, "zero_insert: stride must be positive");
  require(first_axis <= in.size(), "zero_insert: first axis out of range");
  Shape out = in;
  for (std::size_t ax = first_axis; ax < in.size(); ++ax) out[ax] = in[ax] == 0 ? 0 : (in[ax] - 1) * stride + 1;
  const Shape strides = row_major_strides(in);
  std::vector<std::size_t> map(shape_numel(out));
  detail::for_each_index(out, [&](const std::vector<std::size_t>& idx, std::size_t flat) {
    std::size_t off = 0;
    for (std::size_t ax = 0; ax < idx.size(); ++ax) {
      std::size_t i = idx[ax];
      if (ax >= first_axis) {
        if (i % stride != 0) {
          map[flat] = kNoSource;
          return;
        }
        i /= stride;
      }
      off += i * strides[ax];
    }
    map[flat] = off;
  });
  return detail::gather("zero_insert", x, std::move(out), std::move(map));
}

template <typename T>
Var<T> index_select(const Var<T>& x, std::size_t axis, const std::vector<std::size_t>& indices) {
  const Shape& in = x.shape();
  require(axis < in.size(), "index_select: axis out of range for " + shape_str(in));
  for (std::size_t i : indices) require(i < in[axis], "index_select: index " + std::to_string(i) + " out of range");
  Shape out = in;
  out[axis] = indices.size();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  std::vector<std::size_t> map;
  map.reserve(outer * indices.size() * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t sel : indices) {
      const std::size_t base = (o * in[axis] + sel) * inner;
      for (std::size_t i = 0; i < inner; ++i) map.push_back(base + i);
    }
  }
  return detail::gather("index_select", x, std::move(out), std::move(map));
}

#define NNYNET_INST(T)                                                                                   \
  template Var<T> reshape(const Var<T>&, Shape);                                                         \
  template Var<T> permute(const Var<T>&, const std::vector<std::size_t>&);                               \
  template Var<T> expand(const Var<T>&, const Shape&);                                                   \
  template Var<T> pad(const Var<T>&, const std::vector<std::size_t>&, const std::vector<std::size_t>&);  \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);                           \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                                       \
  template Var<T> roll(const Var<T>&, const std::vector<long>&);                                         \
  template Var<T> flip(const Var<T>&, const std::vector<std::size_t>&);                                  \
  template Var<T> zero_insert(const Var<T>&, std::size_t, std::size_t);                                  \
  template Var<T> index_select(const Var<T>&, std::size_t, const std::vector<std::size_t>&);
NNYNET_INSTANTIATE_FOR_FLOATS(NNYNET_INST)
#undef NNYNET_INST

}  // namespace nnynet
