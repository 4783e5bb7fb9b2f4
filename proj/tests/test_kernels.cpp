#include <doctest.h>

#include <cmath>
#include <vector>

#include "semtok/kernels.hpp"
#include "semtok/rng.hpp"
#include "semtok/tensor.hpp"

using namespace semtok;
using kernels::Isa;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Textbook triple loops, kept independent of every kernel table.
std::vector<double> naive_nn(std::size_t m, std::size_t k, std::size_t p, const std::vector<double>& a,
                             const std::vector<double>& b) {
  std::vector<double> c(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * p + j] += a[i * k + t] * b[t * p + j];
  return c;
}

void require_close(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(std::abs(got[i] - want[i]) <= tol);
}

const std::size_t kSizes[] = {1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 33};

}  // namespace

TEST_CASE("scalar kernels match naive loops") {
  Rng rng(1);
  const auto& t = kernels::scalar_table();
  for (std::size_t m : {1, 3, 8}) {
    for (std::size_t k : kSizes) {
      const std::size_t p = 5;
      const auto a = random_vector(rng, m * k), b = random_vector(rng, k * p);
      std::vector<double> c(m * p, 7.0);
      t.gemm_nn(m, k, p, a.data(), b.data(), c.data(), false);
      require_close(c, naive_nn(m, k, p, a, b), 1e-13);
    }
  }
  const auto x = random_vector(rng, 10), y = random_vector(rng, 10);
  double d = 0.0;
  for (int i = 0; i < 10; ++i) d += x[i] * y[i];
  CHECK(t.dot(x.data(), y.data(), 10) == doctest::Approx(d).epsilon(1e-14));
}

TEST_CASE("every available kernel variant agrees with the scalar reference") {
  Rng rng(2);
  const auto& ref = kernels::scalar_table();
  for (Isa isa : kernels::available_isas()) {
    CAPTURE(kernels::isa_name(isa));
    const auto& t = kernels::table(isa);
    for (std::size_t m : kSizes)
      for (std::size_t k : {1, 4, 7, 16, 33})
        for (std::size_t p : kSizes) {
          const auto a = random_vector(rng, m * k);
          const auto b = random_vector(rng, k * p);
          const auto bt = random_vector(rng, p * k);
          const auto g = random_vector(rng, m * p);
          for (bool acc : {false, true}) {
            auto c0 = random_vector(rng, m * p);
            auto c1 = c0;
            ref.gemm_nn(m, k, p, a.data(), b.data(), c0.data(), acc);
            t.gemm_nn(m, k, p, a.data(), b.data(), c1.data(), acc);
            require_close(c1, c0, 1e-12);

            c0 = random_vector(rng, m * p);
            c1 = c0;
            ref.gemm_nt(m, k, p, a.data(), bt.data(), c0.data(), acc);
            t.gemm_nt(m, k, p, a.data(), bt.data(), c1.data(), acc);
            require_close(c1, c0, 1e-12);

            auto d0 = random_vector(rng, k * p);
            auto d1 = d0;
            ref.gemm_tn(m, k, p, a.data(), g.data(), d0.data(), acc);
            t.gemm_tn(m, k, p, a.data(), g.data(), d1.data(), acc);
            require_close(d1, d0, 1e-12);
          }
        }
    for (std::size_t n : kSizes) {
      const auto x = random_vector(rng, n), y = random_vector(rng, n);
      CHECK(std::abs(t.dot(x.data(), y.data(), n) - ref.dot(x.data(), y.data(), n)) <= 1e-13);
      auto y0 = y, y1 = y;
      ref.axpy(0.37, x.data(), y0.data(), n);
      t.axpy(0.37, x.data(), y1.data(), n);
      require_close(y1, y0, 1e-15);
    }
  }
}

TEST_CASE("matmul gives the same result under every active variant") {
  Rng rng(3);
  const Tensor a = Tensor::from_data({9, 13}, random_vector(rng, 9 * 13));
  const Tensor b = Tensor::from_data({13, 6}, random_vector(rng, 13 * 6));
  kernels::set_active(Isa::scalar);
  const auto ref = matmul(a, b).data();
  const std::vector<double> want(ref.begin(), ref.end());
  for (Isa isa : kernels::available_isas()) {
    kernels::set_active(isa);
    const auto got = matmul(a, b).data();
    require_close(std::vector<double>(got.begin(), got.end()), want, 1e-12);
  }
  kernels::set_active(kernels::available_isas().back());
}

TEST_CASE("scalar is always available and unknown variants are rejected") {
  CHECK(kernels::available(Isa::scalar));
  CHECK(kernels::available_isas().front() == Isa::scalar);
  if (!kernels::available(Isa::neon)) CHECK_THROWS(kernels::table(Isa::neon));
}
