#include <algorithm>

#include "semtok/kernels.hpp"

namespace semtok::kernels {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn(std::size_t m, std::size_t k, std::size_t p, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * p;
    const double* arow = a + i * k;
    for (std::size_t r = 0; r < k; ++r) {
      const double av = arow[r];
      const double* brow = b + r * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t p, const double* a,
             const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < p; ++j) {
      const double v = dot(arow, b + j * k, k);
      c[i * p + j] = accumulate ? c[i * p + j] + v : v;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t p, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * p, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    const double* arow = a + r * k;
    const double* brow = b + r * p;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = arow[i];
      double* crow = c + i * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{Isa::scalar, "scalar", dot, axpy, gemm_nn, gemm_nt, gemm_tn};
  return t;
}

}  // namespace semtok::kernels
