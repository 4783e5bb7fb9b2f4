// AArch64 Advanced SIMD variant; two doubles per vector.

#include <arm_neon.h>

#include <algorithm>

#include "semtok/kernels.hpp"

namespace semtok::kernels {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Same strided formulation as the AVX2 variant, 4x4 register tile.
template <int R>
inline void tile_rows(std::size_t i0, std::size_t K, std::size_t P, const double* a,
                      std::size_t rs, std::size_t cs, const double* b, double* c,
                      bool accumulate) {
  std::size_t j = 0;
  for (; j + 4 <= P; j += 4) {
    float64x2_t lo[R], hi[R];
    for (int q = 0; q < R; ++q) {
      double* crow = c + (i0 + q) * P + j;
      lo[q] = accumulate ? vld1q_f64(crow) : vdupq_n_f64(0.0);
      hi[q] = accumulate ? vld1q_f64(crow + 2) : vdupq_n_f64(0.0);
    }
    for (std::size_t r = 0; r < K; ++r) {
      const float64x2_t b0 = vld1q_f64(b + r * P + j);
      const float64x2_t b1 = vld1q_f64(b + r * P + j + 2);
      for (int q = 0; q < R; ++q) {
        const double av = a[(i0 + q) * rs + r * cs];
        lo[q] = vfmaq_n_f64(lo[q], b0, av);
        hi[q] = vfmaq_n_f64(hi[q], b1, av);
      }
    }
    for (int q = 0; q < R; ++q) {
      double* crow = c + (i0 + q) * P + j;
      vst1q_f64(crow, lo[q]);
      vst1q_f64(crow + 2, hi[q]);
    }
  }
  for (; j < P; ++j) {
    for (int q = 0; q < R; ++q) {
      double acc = accumulate ? c[(i0 + q) * P + j] : 0.0;
      for (std::size_t r = 0; r < K; ++r) acc += a[(i0 + q) * rs + r * cs] * b[r * P + j];
      c[(i0 + q) * P + j] = acc;
    }
  }
}

void gemm_strided(std::size_t M, std::size_t K, std::size_t P, const double* a,
                  std::size_t rs, std::size_t cs, const double* b, double* c,
                  bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) tile_rows<4>(i, K, P, a, rs, cs, b, c, accumulate);
  for (; i < M; ++i) tile_rows<1>(i, K, P, a, rs, cs, b, c, accumulate);
}

void gemm_nn(std::size_t m, std::size_t k, std::size_t p, const double* a,
             const double* b, double* c, bool accumulate) {
  gemm_strided(m, k, p, a, k, 1, b, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t p, const double* a,
             const double* b, double* c, bool accumulate) {
  gemm_strided(k, m, p, a, 1, k, b, c, accumulate);
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t p, const double* a,
             const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      const double v = dot(a + i * k, b + j * k, k);
      c[i * p + j] = accumulate ? c[i * p + j] + v : v;
    }
}

}  // namespace

const KernelTable& neon_table() {
  static const KernelTable t{Isa::neon, "neon", dot, axpy, gemm_nn, gemm_nt, gemm_tn};
  return t;
}

}  // namespace semtok::kernels
