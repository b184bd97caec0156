#include <cmath>
#include <numbers>

#include "ops_detail.hpp"

namespace nnynet {

// Thin wrapper over the C library erf (correctly rounded to within 1 ulp on
// glibc); the unit tests compare it against direct quadrature of
// (2/sqrt(pi)) * integral_0^x exp(-t^2) dt.
double erf_value(double x) { return std::erf(x); }

namespace {

using detail::GradSink;

template <typename T, typename Fwd, typename Da, typename Db>
Var<T> binary(std::string_view name, const Var<T>& a, const Var<T>& b, Fwd fwd, Da da, Db db) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    return Var<T>::from_op(name, std::move(out), {a, b}, [a, b, da, db](const Tensor<T>& g, GradSink<T>& sink) {
      const Tensor<T>& x = a.value();
      const Tensor<T>& y = b.value();
      if (sink.wants(0)) {
        Tensor<T>& ga = sink.buffer(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(x[i], y[i]);
      }
      if (sink.wants(1)) {
        Tensor<T>& gb = sink.buffer(1);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(x[i], y[i]);
      }
    });
  }
  Shape out_shape = broadcast_shapes(av.shape(), bv.shape());
  auto ia = detail::broadcast_offsets(av.shape(), out_shape);
  auto ib = detail::broadcast_offsets(bv.shape(), out_shape);
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[ia[i]], bv[ib[i]]);
  return Var<T>::from_op(name, std::move(out), {a, b},
                         [a, b, da, db, ia = std::move(ia), ib = std::move(ib)](const Tensor<T>& g, GradSink<T>& sink) {
                           const Tensor<T>& x = a.value();
                           const Tensor<T>& y = b.value();
                           if (sink.wants(0)) {
                             Tensor<T>& ga = sink.buffer(0);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[ia[i]] += g[i] * da(x[ia[i]], y[ib[i]]);
                           }
                           if (sink.wants(1)) {
                             Tensor<T>& gb = sink.buffer(1);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[ib[i]] += g[i] * db(x[ia[i]], y[ib[i]]);
                           }
                         });
}

// d(out)/dx expressed through the input and the output value.
template <typename T, typename Fwd, typename D>
Var<T> unary(std::string_view name, const Var<T>& x, Fwd fwd, D d) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  Tensor<T> saved = out;
  return Var<T>::from_op(name, std::move(out), {x}, [x, d, saved = std::move(saved)](const Tensor<T>& g, GradSink<T>& sink) {
    if (!sink.wants(0)) return;
    const Tensor<T>& xv = x.value();
    Tensor<T>& gx = sink.buffer(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(xv[i], saved[i]);
  });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary<T>("add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary<T>("sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary<T>("mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  return unary<T>("neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T out) { return out; });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> erf(const Var<T>& x) {
  return unary<T>(
      "erf", x, [](T v) { return static_cast<T>(erf_value(v)); },
      [](T v, T) { return static_cast<T>(2.0 / std::sqrt(std::numbers::pi) * std::exp(-double(v) * double(v))); });
}

template <typename T>
Var<T> clamp_min(const Var<T>& x, T lo) {
  return unary<T>("clampmin", x, [lo](T v) { return v < lo ? lo : v; }, [lo](T v, T) { return v < lo ? T(0) : T(1); });
}

template <typename T>
Var<T> scale(const Var<T>& x, T c) {
  return unary<T>("scale", x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return unary<T>("add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> pow_scalar(const Var<T>& x, T p) {
  return unary<T>(
      "pow", x, [p](T v) { return std::pow(v, p); },
      [p](T v, T) { return p == T(0) ? T(0) : p * std::pow(v, p - T(1)); });
}

template <typename T>
Var<T> elementwise(ElementwiseOp op, const Var<T>& a, const Var<T>* b, T param) {
  auto rhs = [&]() -> const Var<T>& {
    if (b == nullptr || !b->defined()) throw ContractError("elementwise: binary op without second operand");
    return *b;
  };
  switch (op) {
    case ElementwiseOp::add: return add(a, rhs());
    case ElementwiseOp::sub: return sub(a, rhs());
    case ElementwiseOp::mul: return mul(a, rhs());
    case ElementwiseOp::div: return div(a, rhs());
    case ElementwiseOp::neg: return neg(a);
    case ElementwiseOp::exp: return exp(a);
    case ElementwiseOp::log: return log(a);
    case ElementwiseOp::erf: return erf(a);
    case ElementwiseOp::clampmin: return clamp_min(a, param);
  }
  throw ContractError("elementwise: unknown op");
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  return mul(scale(x, T(0.5)), add_scalar(erf(scale(x, inv_sqrt2)), T(1)));
}

#define NNYNET_INST(T)                                                   \
  template Var<T> elementwise(ElementwiseOp, const Var<T>&, const Var<T>*, T); \
  template Var<T> add(const Var<T>&, const Var<T>&);                     \
  template Var<T> sub(const Var<T>&, const Var<T>&);                     \
  template Var<T> mul(const Var<T>&, const Var<T>&);                     \
  template Var<T> div(const Var<T>&, const Var<T>&);                     \
  template Var<T> neg(const Var<T>&);                                    \
  template Var<T> exp(const Var<T>&);                                    \
  template Var<T> log(const Var<T>&);                                    \
  template Var<T> erf(const Var<T>&);                                    \
  template Var<T> clamp_min(const Var<T>&, T);                           \
  template Var<T> scale(const Var<T>&, T);                               \
  template Var<T> add_scalar(const Var<T>&, T);                          \
  template Var<T> pow_scalar(const Var<T>&, T);                          \
  template Var<T> gelu(const Var<T>&);
NNYNET_INSTANTIATE_FOR_FLOATS(NNYNET_INST)
#undef NNYNET_INST

}  // namespace nnynet
