#pragma once
// Differentiable operation set. Each op computes its value eagerly and, when
// any input requires a gradient, records a backward rule on the result.
//
// Layout conventions used throughout the network code:
//   feature maps  [C, D, H, W]  (channel-first, conv3d/transposed_conv3d)
//   token grids   [D, H, W, C]  (channel-last, layer_norm/linear)

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "nnynet/autodiff.hpp"

namespace nnynet {

enum class ElementwiseOp { add, sub, mul, div, neg, exp, log, erf, clampmin };

// Binary ops broadcast numpy-style; unary ops ignore `b`. `param` is the
// lower bound for clampmin.
template <typename T>
Var<T> elementwise(ElementwiseOp op, const Var<T>& a, const Var<T>* b = nullptr, T param = T{});

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> neg(const Var<T>& x);
template <typename T> Var<T> exp(const Var<T>& x);
template <typename T> Var<T> log(const Var<T>& x);
template <typename T> Var<T> erf(const Var<T>& x);
template <typename T> Var<T> clamp_min(const Var<T>& x, T lo);
template <typename T> Var<T> scale(const Var<T>& x, T c);
template <typename T> Var<T> add_scalar(const Var<T>& x, T c);
template <typename T> Var<T> pow_scalar(const Var<T>& x, T p);

// x/2 * (1 + erf(x/sqrt 2)), composed from the primitives above.
template <typename T> Var<T> gelu(const Var<T>& x);

// [n,k]x[k,m], [B,n,k]x[B,k,m], or [B,n,k]x[k,m] (shared right operand).
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& axes);
template <typename T> Var<T> expand(const Var<T>& x, const Shape& shape);
// Zero padding; before/after have one entry per axis.
template <typename T>
Var<T> pad(const Var<T>& x, const std::vector<std::size_t>& before, const std::vector<std::size_t>& after);
template <typename T> Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T> Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis);
// Toroidal roll: out[i] = x[(i - shift) mod n] per axis.
template <typename T> Var<T> roll(const Var<T>& x, const std::vector<long>& shifts);
template <typename T> Var<T> flip(const Var<T>& x, const std::vector<std::size_t>& axes);
// Inserts stride-1 zeros between neighbours along every axis >= first_axis.
template <typename T> Var<T> zero_insert(const Var<T>& x, std::size_t first_axis, std::size_t stride);
template <typename T>
Var<T> index_select(const Var<T>& x, std::size_t axis, const std::vector<std::size_t>& indices);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> sum(const Var<T>& x, std::size_t axis, bool keepdim = false);
template <typename T> Var<T> mean(const Var<T>& x);
// Gradient routes to the first maximal element of each slice.
template <typename T> Var<T> max(const Var<T>& x, std::size_t axis, bool keepdim = false);

// Max-subtracted softmax along `axis`.
template <typename T> Var<T> softmax(const Var<T>& x, std::size_t axis);

// Normalizes over the last axis, then gamma * xhat + beta.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

struct Conv3dOptions {
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> padding{0, 0, 0};
  std::size_t groups = 1;
};

// Cross-correlation. x: [Cin, D, H, W]; w: [Cout, Cin/groups, kd, kh, kw];
// bias: [Cout] or undefined.
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, const Conv3dOptions& opts = {});

// Learnable upsampling: insert stride-1 zeros between input voxels, pad by
// F-1 on both sides, cross-correlate with the spatially flipped kernel.
// x: [Cin, D, H, W]; w: [Cout, Cin, Fd, Fh, Fw]. Output extent per axis is
// stride*(n-1) + F, so stride == F == 2 doubles every extent.
template <typename T>
Var<T> transposed_conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::size_t stride);

// Scalar erf used by the forward and backward of erf().
double erf_value(double x);

}  // namespace nnynet
