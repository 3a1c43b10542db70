// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "lpa/tensor.hpp"

namespace lpa {

/// Topologically ordered record of the ops that produced a scalar loss.
/// Recorded from the loss's graph; each node appears after its inputs.
class Tape {
 public:
  static Tape record(const Tensor& loss);

  /// Accumulates d(loss)/d(x) into every gradient-tracking tensor on the tape.
  void backward() const;

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Tensor>& nodes() const { return nodes_; }

 private:
  explicit Tape(Tensor loss) : loss_(std::move(loss)) {}
  Tensor loss_;
  std::vector<Tensor> nodes_;
};

/// Records a tape from `loss` and runs it backward. Throws ContractError for
/// a non-scalar loss.
void backward(const Tensor& loss);

/// Central differences (f(x+h·e_i) - f(x-h·e_i)) / 2h for every coordinate
/// of x. Mutates x in place during probing and restores it. Throws
/// NumericalError if f is non-finite at any probe.
std::vector<double> finite_diff(const std::function<double(const Tensor&)>& f, Tensor& x,
                                double h = 1e-5);

/// ||a - b|| / max(||a||, ||b||, floor).
double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                      double floor = 1e-8);

}  // namespace lpa
