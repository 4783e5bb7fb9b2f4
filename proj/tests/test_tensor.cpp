#include <doctest.h>

#include <cmath>
#include <vector>

#include "semtok/error.hpp"
#include "semtok/rng.hpp"
#include "semtok/tensor.hpp"

using namespace semtok;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(values(matmul(eye, b)) == values(b));
  const Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const Tensor ones = Tensor::from_data({2, 1}, {1, 1});
  CHECK(values(matmul(a, ones)) == std::vector<double>{3, 7});
  CHECK(values(matmul(Tensor::zeros({2, 2}), b)) == std::vector<double>(6, 0.0));
  CHECK_THROWS_AS(matmul(b, b), DimensionError);
}

TEST_CASE("matmul_nt equals matmul with an explicit transpose") {
  Rng rng(4);
  std::vector<double> av(12), bv(20);
  for (double& x : av) x = rng.normal();
  for (double& x : bv) x = rng.normal();
  const Tensor a = Tensor::from_data({3, 4}, av), b = Tensor::from_data({5, 4}, bv);
  const auto x = values(matmul_nt(a, b)), y = values(matmul(a, transpose(b)));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == doctest::Approx(y[i]).epsilon(1e-14));
}

TEST_CASE("softmax examples") {
  const auto u = values(softmax_lastdim(Tensor::from_data({1, 3}, {0, 0, 0})));
  for (double v : u) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto big = values(softmax_lastdim(Tensor::from_data({1, 2}, {1000, 1000})));
  CHECK(big[0] == 0.5);
  CHECK(big[1] == 0.5);
  const auto one = values(softmax_lastdim(Tensor::from_data({1, 2}, {1, 2}), {true, false}));
  CHECK(one[0] == 1.0);
  CHECK(one[1] == 0.0);
  CHECK_THROWS_AS(softmax_lastdim(Tensor::from_data({1, 2}, {1, 2}), {false, false}), DegenerateError);
}

TEST_CASE("softmax rows sum to one and masked entries are exactly zero") {
  Rng rng(5);
  std::vector<double> v(6 * 7);
  for (double& x : v) x = rng.uniform(-30, 30);
  std::vector<bool> keep(7, true);
  keep[2] = keep[5] = false;
  const auto y = values(softmax_lastdim(Tensor::from_data({6, 7}, v), keep));
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) s += y[i * 7 + j];
    CHECK(std::abs(s - 1.0) <= 1e-12);
    CHECK(y[i * 7 + 2] == 0.0);
    CHECK(y[i * 7 + 5] == 0.0);
  }
}

TEST_CASE("sigmoid examples") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(sigmoid(Tensor::scalar(1.0)).item() == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  Rng rng(6);
  std::vector<double> v(10);
  for (double& x : v) x = rng.uniform(-5, 5);
  const auto p = values(sigmoid(Tensor::from_data({10}, v)));
  const auto q = values(sigmoid(scale(Tensor::from_data({10}, v), -1.0)));
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(q[i] - (1.0 - p[i])) <= 1e-15);
}

TEST_CASE("layernorm examples") {
  const Tensor g1 = Tensor::full({3}, 1.0), b0 = Tensor::zeros({3});
  const auto flat = values(layernorm(Tensor::from_data({1, 3}, {2, 2, 2}), g1, b0, 1e-6));
  for (double v : flat) CHECK(v == 0.0);
  const auto pm = values(layernorm(Tensor::from_data({1, 2}, {1, 3}), Tensor::full({2}, 1.0),
                                   Tensor::zeros({2}), 1e-14));
  CHECK(pm[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(pm[1] == doctest::Approx(1.0).epsilon(1e-12));
  const Tensor bias = Tensor::from_data({3}, {0.1, -0.2, 0.3});
  const auto z = values(layernorm(Tensor::from_data({2, 3}, {1, 5, -2, 0, 1, 9}), Tensor::zeros({3}), bias, 1e-6));
  CHECK(z == std::vector<double>{0.1, -0.2, 0.3, 0.1, -0.2, 0.3});
}

TEST_CASE("relu, gelu and cross entropy values") {
  const auto r = values(relu(Tensor::from_data({3}, {0.4, -0.3, 0.0})));
  CHECK(r == std::vector<double>{0.4, 0.0, 0.0});
  // GELU(1) = Phi(1) = 0.8413447460685429.
  CHECK(gelu(Tensor::scalar(1.0)).item() == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
  // -log(e^2 / (e^1 + e^2 + e^3))
  const double want = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 2.0;
  CHECK(cross_entropy(Tensor::from_data({3}, {1, 2, 3}), 1).item() == doctest::Approx(want).epsilon(1e-14));
  CHECK_THROWS_AS(cross_entropy(Tensor::from_data({3}, {1, 2, 3}), 3), ContractError);
}

TEST_CASE("structural ops") {
  const Tensor a = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK(values(transpose(a)) == std::vector<double>{1, 3, 5, 2, 4, 6});
  CHECK(values(slice_rows(a, 1, 3)) == std::vector<double>{3, 4, 5, 6});
  CHECK(values(slice_cols(a, 1, 2)) == std::vector<double>{2, 4, 6});
  const std::vector<std::size_t> rows{2, 0};
  CHECK(values(gather_rows(a, rows)) == std::vector<double>{5, 6, 1, 2});
  CHECK(values(embedding_lookup(a, rows)) == std::vector<double>{5, 6, 1, 2});
  CHECK(gather_rows(a, std::vector<std::size_t>{}).rows() == 0);
  CHECK(values(concat_rows({a, slice_rows(a, 0, 1)})) == std::vector<double>{1, 2, 3, 4, 5, 6, 1, 2});
  CHECK(values(concat_cols({a, slice_cols(a, 0, 1)})) == std::vector<double>{1, 2, 1, 3, 4, 3, 5, 6, 5});
  CHECK(reshape(a, {2, 3}).shape() == Shape{2, 3});
  CHECK_THROWS_AS(reshape(a, {4}), DimensionError);
  CHECK_THROWS_AS(gather_rows(a, std::vector<std::size_t>{3}), DimensionError);
  CHECK_THROWS_AS(concat_rows({a, transpose(a)}), DimensionError);
}

TEST_CASE("broadcasting is limited to rows and columns") {
  const Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(values(add_row(a, Tensor::from_data({3}, {10, 20, 30}))) ==
        std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(values(mul_rows(a, Tensor::from_data({2, 1}, {2, -1}))) ==
        std::vector<double>{2, 4, 6, -4, -5, -6});
  CHECK_THROWS_AS(add(a, Tensor::zeros({3})), DimensionError);
  CHECK_THROWS_AS(add_row(a, Tensor::zeros({2})), DimensionError);
}

TEST_CASE("backward examples") {
  Tensor p = Tensor::parameter({2}, {1, 2});
  sum(p).backward();
  CHECK(values(Tensor::from_data({2}, {p.grad().begin(), p.grad().end()})) == std::vector<double>{1, 1});
  p.zero_grad();
  sum(mul(p, p)).backward();
  CHECK(std::vector<double>(p.grad().begin(), p.grad().end()) == std::vector<double>{2, 4});

  // Repeated calls accumulate.
  sum(mul(p, p)).backward();
  CHECK(std::vector<double>(p.grad().begin(), p.grad().end()) == std::vector<double>{4, 8});

  Tensor q = Tensor::parameter({2}, {3, 4});
  p.zero_grad();
  sum(p).backward();
  const auto qg = q.grad();
  for (double g : qg) CHECK(g == 0.0);

  CHECK_THROWS_AS(mul(p, p).backward(), ContractError);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(8);
  std::vector<double> v(6);
  for (double& x : v) x = rng.uniform(-2, 2);
  Tensor p = Tensor::parameter({2, 3}, v);
  auto l1 = [&] { return sum(sigmoid(p)); };
  auto l2 = [&] { return mean(mul(p, gelu(p))); };
  l1().backward();
  const std::vector<double> g1(p.grad().begin(), p.grad().end());
  p.zero_grad();
  l2().backward();
  const std::vector<double> g2(p.grad().begin(), p.grad().end());
  p.zero_grad();
  add(l1(), l2()).backward();
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(p.grad()[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-14));
}

TEST_CASE("a node reached twice is visited once") {
  Tensor p = Tensor::parameter({1}, {3.0});
  const Tensor y = mul(p, p);        // 9
  const Tensor z = add(y, y);        // 18, y reached along two edges
  sum(mul(z, z)).backward();         // d/dp (2p^2)^2 = 16 p^3
  CHECK(p.grad()[0] == doctest::Approx(16.0 * 27.0));
}

TEST_CASE("no-grad guard suppresses graph recording") {
  Tensor p = Tensor::parameter({2}, {1, 2});
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const Tensor y = mul(p, p);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(mul(p, p).requires_grad());
}

TEST_CASE("flop counter charges a multiply-add as two") {
  const Tensor a = Tensor::zeros({3, 4}), b = Tensor::zeros({4, 5});
  flops::Scope s;
  matmul(a, b);
  CHECK(s.elapsed() == 2 * 3 * 4 * 5);
  flops::Scope t;
  sigmoid(a);
  CHECK(t.elapsed() == 4 * 12);
  flops::Scope u;
  layernorm(a, Tensor::full({4}, 1.0), Tensor::zeros({4}), 1e-6);
  CHECK(u.elapsed() == 8 * 12);
}

TEST_CASE("registered op list has no duplicates") {
  const auto& ops = differentiable_ops();
  for (std::size_t i = 0; i < ops.size(); ++i)
    for (std::size_t j = i + 1; j < ops.size(); ++j) CHECK(ops[i] != ops[j]);
  CHECK(ops.size() >= 20);
}

TEST_CASE("rng streams are reproducible") {
  // Reference value of the splitmix64 generator's first output from state 0.
  CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(42).next_u64() != Rng(43).next_u64());
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(a.below(7) < 7);
  }
  CHECK(counter_uniform(5, 1, 2) == counter_uniform(5, 1, 2));
  CHECK(counter_uniform(5, 1, 2) != counter_uniform(5, 2, 1));
  CHECK(Rng(9).split(1).next_u64() == Rng(9).split(1).next_u64());
  CHECK(Rng(9).split(1).next_u64() != Rng(9).split(2).next_u64());
}
