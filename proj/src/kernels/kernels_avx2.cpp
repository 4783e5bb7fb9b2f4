// Compiled with -mavx2 -mfma; only reached after the dispatcher has
// confirmed CPU support.

#include <immintrin.h>

#include <algorithm>

#include "semtok/kernels.hpp"

namespace semtok::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// C[M x P] (+)= A' * B where A'(i, r) = a[i * rs + r * cs] and B is K x P
// row-major. Register tile: R rows by 8 columns.
template <int R>
inline void tile_rows(std::size_t i0, std::size_t K, std::size_t P, const double* a,
                      std::size_t rs, std::size_t cs, const double* b, double* c,
                      bool accumulate) {
  std::size_t j = 0;
  for (; j + 8 <= P; j += 8) {
    __m256d lo[R], hi[R];
    for (int q = 0; q < R; ++q) {
      double* crow = c + (i0 + q) * P + j;
      lo[q] = accumulate ? _mm256_loadu_pd(crow) : _mm256_setzero_pd();
      hi[q] = accumulate ? _mm256_loadu_pd(crow + 4) : _mm256_setzero_pd();
    }
    for (std::size_t r = 0; r < K; ++r) {
      const __m256d b0 = _mm256_loadu_pd(b + r * P + j);
      const __m256d b1 = _mm256_loadu_pd(b + r * P + j + 4);
      for (int q = 0; q < R; ++q) {
        const __m256d av = _mm256_broadcast_sd(a + (i0 + q) * rs + r * cs);
        lo[q] = _mm256_fmadd_pd(av, b0, lo[q]);
        hi[q] = _mm256_fmadd_pd(av, b1, hi[q]);
      }
    }
    for (int q = 0; q < R; ++q) {
      double* crow = c + (i0 + q) * P + j;
      _mm256_storeu_pd(crow, lo[q]);
      _mm256_storeu_pd(crow + 4, hi[q]);
    }
  }
  for (; j + 4 <= P; j += 4) {
    __m256d acc[R];
    for (int q = 0; q < R; ++q) {
      double* crow = c + (i0 + q) * P + j;
      acc[q] = accumulate ? _mm256_loadu_pd(crow) : _mm256_setzero_pd();
    }
    for (std::size_t r = 0; r < K; ++r) {
      const __m256d b0 = _mm256_loadu_pd(b + r * P + j);
      for (int q = 0; q < R; ++q)
        acc[q] = _mm256_fmadd_pd(_mm256_broadcast_sd(a + (i0 + q) * rs + r * cs), b0, acc[q]);
    }
    for (int q = 0; q < R; ++q) _mm256_storeu_pd(c + (i0 + q) * P + j, acc[q]);
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
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    std::size_t j = 0;
    for (; j + 4 <= p; j += 4) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      std::size_t r = 0;
      for (; r + 4 <= k; r += 4) {
        const __m256d av = _mm256_loadu_pd(arow + r);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + r), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + r), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + r), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + r), s3);
      }
      double v[4] = {hsum(s0), hsum(s1), hsum(s2), hsum(s3)};
      for (; r < k; ++r) {
        v[0] += arow[r] * b0[r];
        v[1] += arow[r] * b1[r];
        v[2] += arow[r] * b2[r];
        v[3] += arow[r] * b3[r];
      }
      for (int q = 0; q < 4; ++q) {
        double& out = c[i * p + j + q];
        out = accumulate ? out + v[q] : v[q];
      }
    }
    for (; j < p; ++j) {
      const double v = dot(arow, b + j * k, k);
      c[i * p + j] = accumulate ? c[i * p + j] + v : v;
    }
  }
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable t{Isa::avx2, "avx2", dot, axpy, gemm_nn, gemm_nt, gemm_tn};
  return t;
}

}  // namespace semtok::kernels
