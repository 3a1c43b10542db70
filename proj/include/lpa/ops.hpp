// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Every op checks shapes up front and
// throws DimensionError naming the offending shapes.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lpa/tensor.hpp"

namespace lpa {

/// [m×k]·[k×n] -> [m×n], or batched [B×m×k]·[B×k×n] -> [B×m×n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Swaps the last two axes (rank 2 or 3).
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// Binary ops broadcast b over a when b is a single element or b's shape is
// a suffix of a's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor gelu(const Tensor& a);
/// Normalizes over the last axis, eps = 1e-5, no affine part.
Tensor layer_norm(const Tensor& a);
/// Softmax over the last axis with max subtraction.
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
std::vector<Tensor> split(const Tensor& a, std::size_t axis,
                          const std::vector<std::size_t>& sizes);
/// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
/// Rows of a rank-2 tensor, in the given order (repeats allowed).
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

/// Mean negative log-likelihood of `labels` under softmax(logits), logits [B×C].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);
/// Mean over rows of KL(softmax(p/T) || softmax(q/T)).
Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits, double temperature);

}  // namespace lpa
