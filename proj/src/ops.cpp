#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "semtok/error.hpp"
#include "semtok/kernels.hpp"
#include "semtok/tensor.hpp"

namespace semtok {

namespace {

thread_local std::uint64_t t_flops = 0;

inline void charge(std::uint64_t n) { t_flops += n; }

using Impl = detail::TensorImpl;
using BackwardFn = std::function<void(Impl&)>;

// Gradient buffer of parent i, or nullptr when that parent is constant.
inline double* parent_grad(Impl& self, std::size_t i) {
  Impl& p = *self.parents[i];
  return p.requires_grad ? p.grad_buffer() : nullptr;
}

inline const std::vector<double>& parent_value(const Impl& self, std::size_t i) {
  return self.parents[i]->value;
}

Tensor record(const char* op, Shape shape, std::vector<double> value,
              std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->value = std::move(value);
  impl->op = op;
  bool needs = false;
  if (grad_enabled())
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  if (needs) {
    impl->requires_grad = true;
    for (const Tensor* t : inputs) impl->parents.push_back(t->handle());
    impl->backward = std::move(backward);
  }
  return Tensor(std::move(impl));
}

Tensor record_many(const char* op, Shape shape, std::vector<double> value,
                   const std::vector<Tensor>& inputs, BackwardFn backward) {
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->value = std::move(value);
  impl->op = op;
  bool needs = false;
  if (grad_enabled())
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    impl->requires_grad = true;
    for (const Tensor& t : inputs) impl->parents.push_back(t.handle());
    impl->backward = std::move(backward);
  }
  return Tensor(std::move(impl));
}

void require(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined operand");
}

void require_matrix(const Tensor& t, const char* op) {
  require(t, op);
  if (t.ndim() > 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a, op);
  require(b, op);
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
}

Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

template <typename F, typename D>
Tensor unary(const char* op, const Tensor& a, std::uint64_t cost, F f, D dfdx_from_xy) {
  require(a, op);
  const auto& x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  charge(cost * x.size());
  return record(op, a.shape(), std::move(y), {&a}, [dfdx_from_xy](Impl& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& x = parent_value(self, 0);
    for (std::size_t i = 0; i < x.size(); ++i)
      gx[i] += self.grad[i] * dfdx_from_xy(x[i], self.value[i]);
  });
}

}  // namespace

namespace flops {
std::uint64_t count() { return t_flops; }
void reset() { t_flops = 0; }
}  // namespace flops

const std::vector<std::string_view>& differentiable_ops() {
  static const std::vector<std::string_view> ops = {
      "matmul",     "matmul_nt",  "add",         "sub",          "mul",
      "add_row",    "mul_rows",   "scale",       "add_scalar",   "sum",
      "mean",       "relu",       "sigmoid",     "gelu",         "softmax_lastdim",
      "layernorm",  "cross_entropy", "transpose", "reshape",     "concat_rows",
      "slice_rows", "gather_rows", "concat_cols", "slice_cols",  "embedding_lookup"};
  return ops;
}

// --- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  std::vector<double> c(m * p);
  kernels::active().gemm_nn(m, k, p, a.data().data(), b.data().data(), c.data(), false);
  charge(2ULL * m * k * p);
  return record("matmul", matrix_shape(m, p), std::move(c), {&a, &b},
                [m, k, p](Impl& self) {
                  const auto& kt = kernels::active();
                  if (double* ga = parent_grad(self, 0))
                    kt.gemm_nt(m, p, k, self.grad.data(), parent_value(self, 1).data(), ga, true);
                  if (double* gb = parent_grad(self, 1))
                    kt.gemm_tn(m, k, p, parent_value(self, 0).data(), self.grad.data(), gb, true);
                });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), p = b.rows();
  if (b.cols() != k)
    throw DimensionError("matmul_nt: inner dimensions disagree " +
                         shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  std::vector<double> c(m * p);
  kernels::active().gemm_nt(m, k, p, a.data().data(), b.data().data(), c.data(), false);
  charge(2ULL * m * k * p);
  return record("matmul_nt", matrix_shape(m, p), std::move(c), {&a, &b},
                [m, k, p](Impl& self) {
                  const auto& kt = kernels::active();
                  if (double* ga = parent_grad(self, 0))
                    kt.gemm_nn(m, p, k, self.grad.data(), parent_value(self, 1).data(), ga, true);
                  if (double* gb = parent_grad(self, 1))
                    kt.gemm_tn(m, p, k, self.grad.data(), parent_value(self, 0).data(), gb, true);
                });
}

// --- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  charge(flop_cost::kElementwise * y.size());
  return record("add", a.shape(), std::move(y), {&a, &b}, [](Impl& self) {
    for (std::size_t j = 0; j < 2; ++j)
      if (double* g = parent_grad(self, j))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  charge(flop_cost::kElementwise * y.size());
  return record("sub", a.shape(), std::move(y), {&a, &b}, [](Impl& self) {
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  charge(flop_cost::kElementwise * y.size());
  return record("mul", a.shape(), std::move(y), {&a, &b}, [](Impl& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_matrix(a, "add_row");
  require(row, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (row.numel() != n)
    throw DimensionError("add_row: row of " + std::to_string(row.numel()) +
                         " elements over matrix " + shape_string(a.shape()));
  std::vector<double> y(a.data().begin(), a.data().end());
  const auto& r = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] += r[j];
  charge(flop_cost::kElementwise * y.size());
  return record("add_row", a.shape(), std::move(y), {&a, &row}, [m, n](Impl& self) {
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < m * n; ++i) g[i] += self.grad[i];
    if (double* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
  });
}

Tensor mul_rows(const Tensor& a, const Tensor& col) {
  require_matrix(a, "mul_rows");
  require(col, "mul_rows");
  const std::size_t m = a.rows(), n = a.cols();
  if (col.numel() != m)
    throw DimensionError("mul_rows: column of " + std::to_string(col.numel()) +
                         " elements over matrix " + shape_string(a.shape()));
  std::vector<double> y(m * n);
  const auto& x = a.data();
  const auto& c = col.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] * c[i];
  charge(flop_cost::kElementwise * y.size());
  return record("mul_rows", a.shape(), std::move(y), {&a, &col}, [m, n](Impl& self) {
    const auto& x = parent_value(self, 0);
    const auto& c = parent_value(self, 1);
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * c[i];
    if (double* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += self.grad[i * n + j] * x[i * n + j];
        g[i] += acc;
      }
  });
}

Tensor scale(const Tensor& a, double factor) {
  require(a, "scale");
  std::vector<double> y(a.data().begin(), a.data().end());
  for (double& v : y) v *= factor;
  charge(flop_cost::kElementwise * y.size());
  return record("scale", a.shape(), std::move(y), {&a}, [factor](Impl& self) {
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  require(a, "add_scalar");
  std::vector<double> y(a.data().begin(), a.data().end());
  for (double& v : y) v += value;
  charge(flop_cost::kElementwise * y.size());
  return record("add_scalar", a.shape(), std::move(y), {&a}, [](Impl& self) {
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  require(a, "sum");
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  charge(flop_cost::kElementwise * a.numel());
  return record("sum", {}, {acc}, {&a}, [](Impl& self) {
    if (double* g = parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  require(a, "mean");
  if (a.numel() == 0) throw ContractError("mean of an empty tensor");
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  charge(flop_cost::kElementwise * a.numel());
  return record("mean", {}, {acc * inv}, {&a}, [inv](Impl& self) {
    if (double* g = parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0] * inv;
    }
  });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, flop_cost::kElementwise, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a, flop_cost::kSigmoid,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      "gelu", a, flop_cost::kGelu,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        return cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

// --- normalisation ---------------------------------------------------------

Tensor softmax_lastdim(const Tensor& a, const std::vector<bool>& keep) {
  require_matrix(a, "softmax_lastdim");
  const std::size_t m = a.rows(), n = a.cols();
  const bool per_col = keep.size() == n;
  const bool per_elem = keep.size() == m * n;
  if (!keep.empty() && !per_col && !per_elem)
    throw DimensionError("softmax_lastdim: mask of " + std::to_string(keep.size()) +
                         " flags is not broadcastable to " + shape_string(a.shape()));
  auto kept = [&](std::size_t i, std::size_t j) {
    if (keep.empty()) return true;
    return per_col ? bool(keep[j]) : bool(keep[i * n + j]);
  };
  const auto& x = a.data();
  std::vector<double> y(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (kept(i, j)) mx = std::max(mx, x[i * n + j]);
    if (mx == -std::numeric_limits<double>::infinity())
      throw DegenerateError("softmax_lastdim: row " + std::to_string(i) +
                            " has no unmasked entry");
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (kept(i, j)) total += (y[i * n + j] = std::exp(x[i * n + j] - mx));
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] *= inv;
  }
  charge(flop_cost::kSoftmax * m * n);
  return record("softmax_lastdim", a.shape(), std::move(y), {&a}, [m, n](Impl& self) {
    double* g = parent_grad(self, 0);
    if (!g) return;
    const auto& y = self.value;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        g[i * n + j] += y[i * n + j] * (self.grad[i * n + j] - dot);
    }
  });
}

Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  require_matrix(a, "layernorm");
  require(gain, "layernorm");
  require(bias, "layernorm");
  const std::size_t m = a.rows(), d = a.cols();
  if (d == 0) throw ContractError("layernorm: zero-width rows");
  if (gain.numel() != d || bias.numel() != d)
    throw DimensionError("layernorm: gain/bias must have " + std::to_string(d) + " elements");
  const auto& x = a.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  std::vector<double> xhat(m * d), inv_std(m), y(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * inv_std[i];
      y[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
    }
  }
  charge(flop_cost::kLayerNorm * m * d);
  return record("layernorm", a.shape(), std::move(y), {&a, &gain, &bias},
                [m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Impl& self) {
                  const auto& gv = parent_value(self, 1);
                  double* gx = parent_grad(self, 0);
                  double* gg = parent_grad(self, 1);
                  double* gb = parent_grad(self, 2);
                  for (std::size_t i = 0; i < m; ++i) {
                    const double* go = self.grad.data() + i * d;
                    const double* xh = xhat.data() + i * d;
                    if (gg)
                      for (std::size_t j = 0; j < d; ++j) gg[j] += go[j] * xh[j];
                    if (gb)
                      for (std::size_t j = 0; j < d; ++j) gb[j] += go[j];
                    if (gx) {
                      double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = go[j] * gv[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                      }
                      mean_dxh /= static_cast<double>(d);
                      mean_dxh_xh /= static_cast<double>(d);
                      for (std::size_t j = 0; j < d; ++j)
                        gx[i * d + j] +=
                            inv_std[i] * (go[j] * gv[j] - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                  }
                });
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  require(logits, "cross_entropy");
  const std::size_t c = logits.numel();
  if (label >= c)
    throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range [0," +
                        std::to_string(c) + ")");
  const auto& z = logits.data();
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(c);
  double total = 0.0;
  for (std::size_t j = 0; j < c; ++j) total += (p[j] = std::exp(z[j] - mx));
  for (double& v : p) v /= total;
  const double loss = std::log(total) + mx - z[label];
  charge(flop_cost::kCrossEntropy * c);
  return record("cross_entropy", {}, {loss}, {&logits},
                [label, p = std::move(p)](Impl& self) {
                  double* g = parent_grad(self, 0);
                  if (!g) return;
                  for (std::size_t j = 0; j < p.size(); ++j)
                    g[j] += self.grad[0] * (p[j] - (j == label ? 1.0 : 0.0));
                });
}

// --- structure -------------------------------------------------------------

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> y(m * n);
  const auto& x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
  return record("transpose", matrix_shape(n, m), std::move(y), {&a}, [m, n](Impl& self) {
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(a, "reshape");
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                         shape_string(shape));
  std::vector<double> y(a.data().begin(), a.data().end());
  return record("reshape", std::move(shape), std::move(y), {&a}, [](Impl& self) {
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  for (const auto& p : parts) require_matrix(p, "concat_rows");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n)
      throw DimensionError("concat_rows: column count mismatch " +
                           shape_string(parts.front().shape()) + " vs " + shape_string(p.shape()));
    m += p.rows();
  }
  std::vector<double> y;
  y.reserve(m * n);
  for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  return record_many("concat_rows", matrix_shape(m, n), std::move(y), parts, [](Impl& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const std::size_t len = self.parents[k]->value.size();
      if (double* g = parent_grad(self, k))
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
      offset += len;
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_rows");
  const std::size_t m = a.rows(), n = a.cols();
  if (begin > end || end > m)
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " + std::to_string(m) + " rows");
  std::vector<double> y(a.data().begin() + begin * n, a.data().begin() + end * n);
  return record("slice_rows", matrix_shape(end - begin, n), std::move(y), {&a},
                [begin, n](Impl& self) {
                  if (double* g = parent_grad(self, 0))
                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                      g[begin * n + i] += self.grad[i];
                });
}

namespace {

Tensor gather_impl(const char* op, const Tensor& a, std::span<const std::size_t> rows) {
  require_matrix(a, op);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (std::size_t r : idx)
    if (r >= m)
      throw DimensionError(std::string(op) + ": row " + std::to_string(r) + " out of range for " +
                           std::to_string(m) + " rows");
  std::vector<double> y(idx.size() * n);
  const auto& x = a.data();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(x.begin() + idx[i] * n, n, y.begin() + i * n);
  const Shape shape = matrix_shape(idx.size(), n);
  return record(op, shape, std::move(y), {&a},
                [n, idx = std::move(idx)](Impl& self) {
                  if (double* g = parent_grad(self, 0))
                    for (std::size_t i = 0; i < idx.size(); ++i)
                      for (std::size_t j = 0; j < n; ++j) g[idx[i] * n + j] += self.grad[i * n + j];
                });
}

}  // namespace

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  return gather_impl("gather_rows", a, rows);
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  return gather_impl("embedding_lookup", table, ids);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  for (const auto& p : parts) require_matrix(p, "concat_cols");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m)
      throw DimensionError("concat_cols: row count mismatch " +
                           shape_string(parts.front().shape()) + " vs " + shape_string(p.shape()));
    widths.push_back(p.cols());
    n += p.cols();
  }
  std::vector<double> y(m * n);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& x = parts[k].data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(x.begin() + i * widths[k], widths[k], y.begin() + i * n + off);
    off += widths[k];
  }
  return record_many("concat_cols", matrix_shape(m, n), std::move(y), parts,
                     [m, n, widths = std::move(widths)](Impl& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         if (double* g = parent_grad(self, k))
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < widths[k]; ++j)
                               g[i * widths[k] + j] += self.grad[i * n + off + j];
                         off += widths[k];
                       }
                     });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (begin > end || end > n)
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " + std::to_string(n) + " columns");
  const std::size_t w = end - begin;
  std::vector<double> y(m * w);
  const auto& x = a.data();
  for (std::size_t i = 0; i < m; ++i) std::copy_n(x.begin() + i * n + begin, w, y.begin() + i * w);
  return record("slice_cols", matrix_shape(m, w), std::move(y), {&a},
                [m, n, w, begin](Impl& self) {
                  if (double* g = parent_grad(self, 0))
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
                });
}

}  // namespace semtok
