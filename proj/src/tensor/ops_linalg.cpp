#include "ops_detail.hpp"

namespace nnynet {

namespace {

// c[n,m] += a[n,k] * b[k,m]; row-major, i-k-j loop order.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* crow = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[n,m] += a[n,k] * b[m,k]^T
template <typename T>
void gemm_acc_bt(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      T s{};
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * m + j] += s;
    }
  }
}

// c[k,m] += a[n,k]^T * b[n,m]
template <typename T>
void gemm_acc_at(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      T* crow = c + p * m;
      const T* brow = b + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  detail::require(sa.size() >= 2 && sa.size() <= 3 && sb.size() >= 2 && sb.size() <= 3,
                  "matmul: operands must be rank 2 or 3, got " + shape_str(sa) + " x " + shape_str(sb));
  detail::require(!(sa.size() == 2 && sb.size() == 3), "matmul: rank-2 x rank-3 is not supported");
  const std::size_t batch = sa.size() == 3 ? sa[0] : 1;
  const bool shared_b = sb.size() == 2;
  const std::size_t n = sa[sa.size() - 2];
  const std::size_t k = sa[sa.size() - 1];
  const std::size_t kb = sb[sb.size() - 2];
  const std::size_t m = sb[sb.size() - 1];
  detail::require(k == kb, "matmul: inner extents differ in " + shape_str(sa) + " x " + shape_str(sb));
  if (!shared_b) detail::require(sb[0] == batch, "matmul: batch extents differ in " + shape_str(sa) + " x " + shape_str(sb));

  Shape out_shape = sa.size() == 3 ? Shape{batch, n, m} : Shape{n, m};
  Tensor<T> out(out_shape);
  const T* ap = a.value().data().data();
  const T* bp = b.value().data().data();
  T* cp = out.data().data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    gemm_acc(ap + bi * n * k, bp + (shared_b ? 0 : bi * k * m), cp + bi * n * m, n, k, m);
  }
  return Var<T>::from_op("matmul", std::move(out), {a, b},
                         [a, b, batch, shared_b, n, k, m](const Tensor<T>& g, detail::GradSink<T>& sink) {
                           const T* gp = g.data().data();
                           const T* ap = a.value().data().data();
                           const T* bp = b.value().data().data();
                           if (sink.wants(0)) {
                             T* gap = sink.buffer(0).data().data();
                             for (std::size_t bi = 0; bi < batch; ++bi) {
                               gemm_acc_bt(gp + bi * n * m, bp + (shared_b ? 0 : bi * k * m), gap + bi * n * k, n, m, k);
                             }
                           }
                           if (sink.wants(1)) {
                             T* gbp = sink.buffer(1).data().data();
                             for (std::size_t bi = 0; bi < batch; ++bi) {
                               gemm_acc_at(ap + bi * n * k, gp + bi * n * m, gbp + (shared_b ? 0 : bi * k * m), n, k, m);
                             }
                           }
                         });
}

#define NNYNET_INST(T) template Var<T> matmul(const Var<T>&, const Var<T>&);
NNYNET_INSTANTIATE_FOR_FLOATS(NNYNET_INST)
#undef NNYNET_INST

}  // namespace nnynet
