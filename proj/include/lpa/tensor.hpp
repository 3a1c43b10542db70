// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor of doubles with optional reverse-mode gradient
// tracking. A Tensor is a cheap shared handle onto a graph node; copying a
// Tensor aliases the same buffer. Use clone() for an independent copy.

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lpa {

using Shape = std::vector<std::size_t>;

/// Shape or size disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite value produced by an operation on finite inputs.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated usage contract (e.g. backward from a non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed binary input; `offset` is the byte position where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(const Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
  bool is_leaf() const { return parents.empty(); }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access; only valid on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  /// Accumulated gradient; zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad();

  /// Deep copy with no graph history.
  Tensor clone() const;
  /// Same buffer contents, cut from the graph.
  Tensor detach() const;

  const char* op_name() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace detail {

using BackwardFn = std::function<void(const Node&)>;

/// Builds an op result: validates finiteness, and wires the graph when any
/// parent tracks gradients and recording is enabled.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::initializer_list<Tensor> parents, BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   const std::vector<Tensor>& parents, BackwardFn backward);

}  // namespace detail

}  // namespace lpa
