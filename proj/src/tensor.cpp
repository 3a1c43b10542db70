// SPDX-License-Identifier: Apache-2.0

#include "lpa/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <sstream>

namespace lpa {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match buffer of " +
                         std::to_string(data.size()) + " elements");
  }
  for (auto s : shape) {
    if (s == 0) throw DimensionError("tensor shape " + shape_str(shape) + " has a zero dimension");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  shape();
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  shape();
  if (!node_->is_leaf()) throw ContractError("mutable_data() on a non-leaf tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2) throw DimensionError("at(i, j) on tensor of shape " + shape_str(shape()));
  return node_->data.at(i * node_->shape[1] + j);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  shape();
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  shape();
  if (node_->grad.empty()) return std::vector<double>(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::clone() const { return Tensor(shape(), node_->data, node_->requires_grad); }

Tensor Tensor::detach() const { return Tensor(shape(), node_->data, false); }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace detail {

namespace {

// Exponent-bit test; vectorizes where std::isfinite in a loop does not.
bool all_finite(const std::vector<double>& data) {
  constexpr std::uint64_t kExp = 0x7ff0000000000000ULL;
  std::uint64_t bad = 0;
  for (double v : data) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExp) == kExp);
  return bad == 0;
}

template <typename Parents>
Tensor build(Shape shape, std::vector<double> data, const char* op, const Parents& parents,
             BackwardFn backward) {
  if (!all_finite(data)) {
    throw NumericalError(std::string("non-finite value produced by ") + op + " with output shape " +
                         shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (g_grad_enabled) {
    bool any = std::any_of(parents.begin(), parents.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const auto& p : parents) node->parents.push_back(p.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace

Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::initializer_list<Tensor> parents, BackwardFn backward) {
  return build(std::move(shape), std::move(data), op, parents, std::move(backward));
}

Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   const std::vector<Tensor>& parents, BackwardFn backward) {
  return build(std::move(shape), std::move(data), op, parents, std::move(backward));
}

}  // namespace detail

}  // namespace lpa
