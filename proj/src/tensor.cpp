#include "semtok/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "semtok/error.hpp"

namespace semtok {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

double* TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad.data();
}

}  // namespace detail

namespace {

thread_local bool t_grad_enabled = true;

struct Fault {
  std::string op;
  double factor = 1.0;
  bool active = false;
};

Fault& fault() {
  static Fault f;
  return f;
}

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, std::vector<double> data,
                                              bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->value = std::move(data);
  impl->requires_grad = requires_grad;
  return impl;
}

void require_defined(const Tensor& t) {
  if (!t.defined()) throw ContractError("use of an undefined tensor");
}

}  // namespace

Tensor Tensor::zeros(Shape shape) {
  const auto n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, 0.0), false));
}

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, value), false));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  return Tensor(make_impl(std::move(shape), std::move(data), false));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  return Tensor(make_impl(std::move(shape), std::move(data), true));
}

const Shape& Tensor::shape() const {
  require_defined(*this);
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const {
  require_defined(*this);
  return impl_->value.size();
}

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.size() == 2) return s[0];
  if (s.size() <= 1) return 1;
  throw DimensionError("tensor of shape " + shape_string(s) + " is not a matrix");
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() == 2) return s[1];
  if (s.size() == 1) return s[0];
  if (s.empty()) return 1;
  throw DimensionError("tensor of shape " + shape_string(s) + " is not a matrix");
}

std::span<const double> Tensor::data() const {
  require_defined(*this);
  return impl_->value;
}

std::span<double> Tensor::mutable_data() {
  require_defined(*this);
  return impl_->value;
}

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return impl_->value[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) throw DimensionError("flat index out of range");
  return impl_->value[i];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (row >= rows() || col >= cols()) throw DimensionError("index out of range");
  return impl_->value[row * cols() + col];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::is_leaf() const { return impl_ && !impl_->backward; }

std::span<const double> Tensor::grad() const {
  require_defined(*this);
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(*this);
  impl_->grad_buffer();
  return impl_->grad;
}

void Tensor::zero_grad() {
  require_defined(*this);
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

const char* Tensor::op() const {
  require_defined(*this);
  return impl_->op;
}

Tensor Tensor::detach() const { return from_data(shape(), impl_->value); }

Tensor Tensor::clone() const {
  return Tensor(make_impl(shape(), impl_->value, impl_->requires_grad && is_leaf()));
}

void Tensor::backward() const {
  require_defined(*this);
  if (numel() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_string(shape()));
  if (!impl_->requires_grad) return;

  // Iterative post-order DFS gives a topological order with each node once.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<const detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorImpl* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order)
    if (node->backward) std::fill(node->grad.begin(), node->grad.end(), 0.0);
  impl_->grad_buffer()[0] += 1.0;

  const Fault& f = fault();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    if (f.active && f.op == node->op)
      for (double& g : node->grad) g *= f.factor;
    node->backward(*node);
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace debug {
void inject_backward_fault(std::string op, double factor) {
  fault() = Fault{std::move(op), factor, true};
}
void clear_backward_fault() { fault() = Fault{}; }
}  // namespace debug

}  // namespace semtok
