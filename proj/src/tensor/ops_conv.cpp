#include <algorithm>

#include "ops_detail.hpp"

namespace nnynet {

using detail::require;

namespace {

struct ConvGeometry {
  std::size_t cin, cout, groups, cin_g, cout_g;
  std::array<std::size_t, 3> in, k, out, stride, pad;
};

// Valid output range [lo, hi) along one axis for kernel tap `tap`:
// input position o*stride + tap - pad must lie in [0, n).
inline void valid_range(std::size_t tap, std::size_t n, std::size_t out, std::size_t stride, std::size_t pad,
                        std::size_t& lo, std::size_t& hi) {
  // o*stride >= pad - tap
  lo = tap >= pad ? 0 : (pad - tap + stride - 1) / stride;
  // o*stride + tap - pad <= n - 1
  const long top = static_cast<long>(n) - 1 + static_cast<long>(pad) - static_cast<long>(tap);
  hi = top < 0 ? 0 : std::min(out, static_cast<std::size_t>(top) / stride + 1);
  if (lo > hi) lo = hi;
}

template <typename T, typename Body>
void for_each_tap(const ConvGeometry& g, Body&& body) {
  for (std::size_t kd = 0; kd < g.k[0]; ++kd) {
    std::size_t d0, d1;
    valid_range(kd, g.in[0], g.out[0], g.stride[0], g.pad[0], d0, d1);
    for (std::size_t kh = 0; kh < g.k[1]; ++kh) {
      std::size_t h0, h1;
      valid_range(kh, g.in[1], g.out[1], g.stride[1], g.pad[1], h0, h1);
      for (std::size_t kw = 0; kw < g.k[2]; ++kw) {
        std::size_t w0, w1;
        valid_range(kw, g.in[2], g.out[2], g.stride[2], g.pad[2], w0, w1);
        for (std::size_t od = d0; od < d1; ++od) {
          const std::size_t id = od * g.stride[0] + kd - g.pad[0];
          for (std::size_t oh = h0; oh < h1; ++oh) {
            const std::size_t ih = oh * g.stride[1] + kh - g.pad[1];
            const std::size_t out_row = (od * g.out[1] + oh) * g.out[2];
            const std::size_t in_row = (id * g.in[1] + ih) * g.in[2];
            body((kd * g.k[1] + kh) * g.k[2] + kw, out_row, in_row, w0, w1, kw);
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, const Conv3dOptions& opts) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require(xs.size() == 4, "conv3d: input must be [C, D, H, W], got " + shape_str(xs));
  require(ws.size() == 5, "conv3d: kernel must be [Cout, Cin/groups, kd, kh, kw], got " + shape_str(ws));
  require(opts.groups >= 1 && xs[0] % opts.groups == 0 && ws[0] % opts.groups == 0,
          "conv3d: channels not divisible by groups");
  require(ws[1] == xs[0] / opts.groups, "conv3d: kernel input channels " + std::to_string(ws[1]) + " vs input " +
                                            shape_str(xs) + " with " + std::to_string(opts.groups) + " groups");
  ConvGeometry g{};
  g.cin = xs[0];
  g.cout = ws[0];
  g.groups = opts.groups;
  g.cin_g = g.cin / g.groups;
  g.cout_g = g.cout / g.groups;
  for (std::size_t a = 0; a < 3; ++a) {
    g.in[a] = xs[a + 1];
    g.k[a] = ws[a + 2];
    g.stride[a] = opts.stride[a];
    g.pad[a] = opts.padding[a];
    require(g.stride[a] >= 1, "conv3d: stride must be positive");
    require(g.in[a] + 2 * g.pad[a] >= g.k[a], "conv3d: kernel larger than padded input");
    g.out[a] = (g.in[a] + 2 * g.pad[a] - g.k[a]) / g.stride[a] + 1;
  }
  if (bias.defined()) require(bias.shape() == Shape{g.cout}, "conv3d: bias must have shape [Cout]");

  const std::size_t in_vol = g.in[0] * g.in[1] * g.in[2];
  const std::size_t out_vol = g.out[0] * g.out[1] * g.out[2];
  const std::size_t k_vol = g.k[0] * g.k[1] * g.k[2];
  Tensor<T> out(Shape{g.cout, g.out[0], g.out[1], g.out[2]});
  const T* xp = x.value().data().data();
  const T* wp = w.value().data().data();
  T* op = out.data().data();
  for (std::size_t co = 0; co < g.cout; ++co) {
    const std::size_t grp = co / g.cout_g;
    T* o = op + co * out_vol;
    if (bias.defined()) std::fill(o, o + out_vol, bias.value()[co]);
    for (std::size_t cig = 0; cig < g.cin_g; ++cig) {
      const T* in = xp + (grp * g.cin_g + cig) * in_vol;
      const T* kern = wp + (co * g.cin_g + cig) * k_vol;
      const std::size_t sw = g.stride[2];
      for_each_tap<T>(g, [&](std::size_t tap, std::size_t out_row, std::size_t in_row, std::size_t w0, std::size_t w1,
                             std::size_t kw) {
        const T kv = kern[tap];
        for (std::size_t ow = w0; ow < w1; ++ow) o[out_row + ow] += kv * in[in_row + ow * sw + kw - g.pad[2]];
      });
    }
  }

  std::vector<Var<T>> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return Var<T>::from_op(
      "conv3d", std::move(out), std::move(parents),
      [x, w, g, has_bias, in_vol, out_vol, k_vol](const Tensor<T>& grad, detail::GradSink<T>& sink) {
        const T* xp = x.value().data().data();
        const T* wp = w.value().data().data();
        const T* gp = grad.data().data();
        const std::size_t sw = g.stride[2];
        T* gx = sink.wants(0) ? sink.buffer(0).data().data() : nullptr;
        T* gw = sink.wants(1) ? sink.buffer(1).data().data() : nullptr;
        for (std::size_t co = 0; co < g.cout; ++co) {
          const std::size_t grp = co / g.cout_g;
          const T* go = gp + co * out_vol;
          for (std::size_t cig = 0; cig < g.cin_g; ++cig) {
            const std::size_t ci = grp * g.cin_g + cig;
            const T* in = xp + ci * in_vol;
            const T* kern = wp + (co * g.cin_g + cig) * k_vol;
            T* gin = gx ? gx + ci * in_vol : nullptr;
            T* gkern = gw ? gw + (co * g.cin_g + cig) * k_vol : nullptr;
            for_each_tap<T>(g, [&](std::size_t tap, std::size_t out_row, std::size_t in_row, std::size_t w0,
                                   std::size_t w1, std::size_t kw) {
              if (gin) {
                const T kv = kern[tap];
                for (std::size_t ow = w0; ow < w1; ++ow) gin[in_row + ow * sw + kw - g.pad[2]] += kv * go[out_row + ow];
              }
              if (gkern) {
                T acc{};
                for (std::size_t ow = w0; ow < w1; ++ow) acc += in[in_row + ow * sw + kw - g.pad[2]] * go[out_row + ow];
                gkern[tap] += acc;
              }
            });
          }
        }
        if (has_bias && sink.wants(2)) {
          Tensor<T>& gb = sink.buffer(2);
          for (std::size_t co = 0; co < g.cout; ++co) {
            T acc{};
            for (std::size_t i = 0; i < out_vol; ++i) acc += gp[co * out_vol + i];
            gb[co] += acc;
          }
        }
      });
}

template <typename T>
Var<T> transposed_conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::size_t stride) {
  require(x.rank() == 4, "transposed_conv3d: input must be [C, D, H, W], got " + shape_str(x.shape()));
  require(w.rank() == 5, "transposed_conv3d: kernel must be [Cout, Cin, Fd, Fh, Fw], got " + shape_str(w.shape()));
  require(w.shape()[1] == x.shape()[0], "transposed_conv3d: kernel expects " + std::to_string(w.shape()[1]) +
                                            " input channels, got " + shape_str(x.shape()));
  require(stride >= 1, "transposed_conv3d: stride must be positive");
  const Var<T> expanded = zero_insert(x, 1, stride);
  const Var<T> kernel = flip(w, {2, 3, 4});
  Conv3dOptions opts;
  for (std::size_t a = 0; a < 3; ++a) opts.padding[a] = w.shape()[a + 2] - 1;
  return conv3d(expanded, kernel, bias, opts);
}

#define NNYNET_INST(T)                                                                        \
  template Var<T> conv3d(const Var<T>&, const Var<T>&, const Var<T>&, const Conv3dOptions&); \
  template Var<T> transposed_conv3d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t);
NNYNET_INSTANTIATE_FOR_FLOATS(NNYNET_INST)
#undef NNYNET_INST

}  // namespace nnynet
