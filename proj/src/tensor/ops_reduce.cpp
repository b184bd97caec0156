#include <cmath>

#include "ops_detail.hpp"

namespace nnynet {

using detail::require;

namespace {

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<long>(axis));
  }
  return out;
}

}  // namespace

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s{};
  for (T v : x.value().data()) s += v;
  return Var<T>::from_op("sum", Tensor<T>::scalar(s), {x}, [](const Tensor<T>& g, detail::GradSink<T>& sink) {
    if (!sink.wants(0)) return;
    Tensor<T>& gx = sink.buffer(0);
    const T gv = g[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gv;
  });
}

template <typename T>
Var<T> sum(const Var<T>& x, std::size_t axis, bool keepdim) {
  require(axis < x.rank(), "sum: axis out of range for " + shape_str(x.shape()));
  const AxisSplit sp = split_at(x.shape(), axis);
  Tensor<T> out(reduced_shape(x.shape(), axis, keepdim));
  const Tensor<T>& xv = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t a = 0; a < sp.len; ++a) {
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += xv[(o * sp.len + a) * sp.inner + i];
    }
  }
  return Var<T>::from_op("sum_axis", std::move(out), {x}, [sp](const Tensor<T>& g, detail::GradSink<T>& sink) {
    if (!sink.wants(0)) return;
    Tensor<T>& gx = sink.buffer(0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t a = 0; a < sp.len; ++a) {
        for (std::size_t i = 0; i < sp.inner; ++i) gx[(o * sp.len + a) * sp.inner + i] += g[o * sp.inner + i];
      }
    }
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  require(x.value().size() > 0, "mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

template <typename T>
Var<T> max(const Var<T>& x, std::size_t axis, bool keepdim) {
  require(axis < x.rank(), "max: axis out of range for " + shape_str(x.shape()));
  const AxisSplit sp = split_at(x.shape(), axis);
  require(sp.len > 0, "max: empty reduction axis");
  Tensor<T> out(reduced_shape(x.shape(), axis, keepdim));
  std::vector<std::size_t> argmax(out.size());
  const Tensor<T>& xv = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.len * sp.inner + i;
      for (std::size_t a = 1; a < sp.len; ++a) {
        const std::size_t k = (o * sp.len + a) * sp.inner + i;
        if (xv[k] > xv[best]) best = k;
      }
      out[o * sp.inner + i] = xv[best];
      argmax[o * sp.inner + i] = best;
    }
  }
  return Var<T>::from_op("max", std::move(out), {x},
                         [argmax = std::move(argmax)](const Tensor<T>& g, detail::GradSink<T>& sink) {
                           if (!sink.wants(0)) return;
                           Tensor<T>& gx = sink.buffer(0);
                           for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
                         });
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  require(axis < x.rank(), "softmax: axis out of range for " + shape_str(x.shape()));
  const AxisSplit sp = split_at(x.shape(), axis);
  const Tensor<T>& xv = x.value();
  Tensor<T> out(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      T mx = xv[base];
      for (std::size_t a = 1; a < sp.len; ++a) mx = std::max(mx, xv[base + a * sp.inner]);
      T z{};
      for (std::size_t a = 0; a < sp.len; ++a) {
        const T e = std::exp(xv[base + a * sp.inner] - mx);
        out[base + a * sp.inner] = e;
        z += e;
      }
      for (std::size_t a = 0; a < sp.len; ++a) out[base + a * sp.inner] /= z;
    }
  }
  Tensor<T> y = out;
  return Var<T>::from_op("softmax", std::move(out), {x}, [sp, y = std::move(y)](const Tensor<T>& g, detail::GradSink<T>& sink) {
    if (!sink.wants(0)) return;
    Tensor<T>& gx = sink.buffer(0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.len * sp.inner + i;
        T dot{};
        for (std::size_t a = 0; a < sp.len; ++a) dot += g[base + a * sp.inner] * y[base + a * sp.inner];
        for (std::size_t a = 0; a < sp.len; ++a) {
          const std::size_t k = base + a * sp.inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  require(x.rank() >= 1, "layer_norm: rank-0 input");
  const std::size_t c = x.shape().back();
  require(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
          "layer_norm: affine parameters must have shape [" + std::to_string(c) + "]");
  const std::size_t rows = x.value().size() / c;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data().data() + r * c;
    T mu{};
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var{};
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (row[j] - mu) * is;
      xhat[r * c + j] = h;
      out[r * c + j] = gv[j] * h + bv[j];
    }
  }
  return Var<T>::from_op(
      "layer_norm", std::move(out), {x, gamma, beta},
      [gamma, c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor<T>& g,
                                                                             detail::GradSink<T>& sink) {
        const Tensor<T>& gv = gamma.value();
        if (sink.wants(0)) {
          Tensor<T>& gx = sink.buffer(0);
          std::vector<T> dh(c);
          for (std::size_t r = 0; r < rows; ++r) {
            T m1{}, m2{};
            for (std::size_t j = 0; j < c; ++j) {
              dh[j] = g[r * c + j] * gv[j];
              m1 += dh[j];
              m2 += dh[j] * xhat[r * c + j];
            }
            m1 /= static_cast<T>(c);
            m2 /= static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += inv_std[r] * (dh[j] - m1 - xhat[r * c + j] * m2);
          }
        }
        if (sink.wants(1)) {
          Tensor<T>& gg = sink.buffer(1);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * xhat[r * c + j];
          }
        }
        if (sink.wants(2)) {
          Tensor<T>& gb = sink.buffer(2);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
          }
        }
      });
}

#define NNYNET_INST(T)                                             \
  template Var<T> sum(const Var<T>&);                              \
  template Var<T> sum(const Var<T>&, std::size_t, bool);           \
  template Var<T> mean(const Var<T>&);                             \
  template Var<T> max(const Var<T>&, std::size_t, bool);           \
  template Var<T> softmax(const Var<T>&, std::size_t);             \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);
NNYNET_INSTANTIATE_FOR_FLOATS(NNYNET_INST)
#undef NNYNET_INST

}  // namespace nnynet
