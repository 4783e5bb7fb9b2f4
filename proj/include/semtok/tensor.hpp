#pragma once

// Float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage and graph node.
// Every op records a backward closure when grad mode is on and at least one
// operand requires a gradient; the graph is dropped with the last handle.
//
// Shapes are explicit. The only broadcast is a row vector over the rows of
// a matrix (add_row) and its column dual (mul_rows). Rank-1 tensors of
// length n act as 1 x n rows where a matrix is expected. Scalars have shape {}.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace semtok {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward;

  // Zero-initialised gradient buffer, allocated on demand.
  double* grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  // Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> data);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  // Matrix view: rank-1 [n] is 1 x n, rank-0 is 1 x 1.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool is_leaf() const;
  std::span<const double> grad() const;  // empty when never touched
  std::span<double> mutable_grad();
  void zero_grad();
  const char* op() const;

  // Value copy without graph history.
  Tensor detach() const;
  // Deep copy that keeps the requires_grad flag (fresh leaf).
  Tensor clone() const;

  // Seeds d(this)/d(this) = 1 and propagates through the recorded graph.
  // Leaf gradients accumulate across calls; interior gradients are reset.
  void backward() const;

  const detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& handle() const { return impl_; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Grad mode and instrumentation

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Per-thread count of floating point operations executed by forward ops.
// A multiply-add counts 2; elementwise costs follow flop_cost below.
namespace flops {
std::uint64_t count();
void reset();

class Scope {
 public:
  Scope() : start_(count()) {}
  std::uint64_t elapsed() const { return count() - start_; }

 private:
  std::uint64_t start_;
};
}  // namespace flops

// Per-element operation counts charged by the instrumented ops.
namespace flop_cost {
inline constexpr std::uint64_t kElementwise = 1;  // add, sub, mul, scale, relu
inline constexpr std::uint64_t kSigmoid = 4;
inline constexpr std::uint64_t kGelu = 8;
inline constexpr std::uint64_t kSoftmax = 5;    // per input element
inline constexpr std::uint64_t kLayerNorm = 8;  // per input element
inline constexpr std::uint64_t kCrossEntropy = 5;  // per class
}  // namespace flop_cost

// Names of every op with a registered backward rule, in registration order.
const std::vector<std::string_view>& differentiable_ops();

namespace debug {
// Scales the incoming gradient of every node produced by `op` by `factor`
// during backward. Used as a negative control for gradient checking.
void inject_backward_fault(std::string op, double factor = 1.5);
void clear_backward_fault();
}  // namespace debug

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(const Tensor& a, const Tensor& b);
// a [m x k] * b[p x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// a [m x n] + row [n] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
// a [m x n] with row i scaled by col[i].
Tensor mul_rows(const Tensor& a, const Tensor& col);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// relu'(0) is 0.
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// Exact form x * Phi(x).
Tensor gelu(const Tensor& a);

// Row-wise softmax over the last axis. `keep` is empty (no mask), one flag
// per column (key padding, shared by all rows) or one flag per element.
// Masked entries are exactly zero. A row with no kept entry throws
// DegenerateError.
Tensor softmax_lastdim(const Tensor& a, const std::vector<bool>& keep = {});

Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps);

// -log softmax(logits)[label] for a single example.
Tensor cross_entropy(const Tensor& logits, std::size_t label);

Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
// Rows of `table` selected by ids; ids must be < table.rows().
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids);

}  // namespace semtok
