// SPDX-License-Identifier: Apache-2.0

#include "lpa/autodiff.hpp"

#include <cmath>
#include <unordered_set>

namespace lpa {

Tape Tape::record(const Tensor& loss) {
  Tape tape(loss);
  // Iterative post-order DFS: a node is emitted once all its parents are.
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (parent->requires_grad && seen.insert(parent.get()).second) {
        stack.emplace_back(std::move(parent), 0);
      }
      continue;
    }
    tape.nodes_.emplace_back(node);
    stack.pop_back();
  }
  return tape;
}

void Tape::backward() const {
  auto& root = *loss_.node();
  if (root.is_leaf()) {
    root.grad_buffer()[0] += 1.0;
    return;
  }
  root.grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const auto& node = *it->node();
    if (node.backward && !node.grad.empty()) node.backward(node);
  }
  // Intermediate gradients are scratch; only leaves keep theirs.
  for (const auto& t : nodes_) {
    if (!t.node()->is_leaf()) t.node()->grad.clear();
  }
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  Tape::record(loss).backward();
}

std::vector<double> finite_diff(const std::function<double(const Tensor&)>& f, Tensor& x,
                                double h) {
  auto buf = x.mutable_data();
  std::vector<double> out(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double orig = buf[i];
    buf[i] = orig + h;
    const double plus = f(x);
    buf[i] = orig - h;
    const double minus = f(x);
    buf[i] = orig;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericalError("finite_diff: non-finite function value at coordinate " +
                           std::to_string(i));
    }
    out[i] = (plus - minus) / (2.0 * h);
  }
  return out;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor) {
  if (a.size() != b.size()) throw DimensionError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace lpa
