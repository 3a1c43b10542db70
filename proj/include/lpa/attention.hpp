// SPDX-License-Identifier: Apache-2.0
//
// Multi-head self-attention in two flavours: vanilla content attention, and
// locality-preserved attention (LPA), whose map mixes the content scores
// with a learned projection of the quadratic relative-position encoding:
//
//   map_h = softmax_rows(lambda_h * scores_h + v_h · r)
//
// Tokens are rows. Weights are stored input-major, so a projection is
// x · W with W of shape [d × d_h].

#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lpa/patch_grid.hpp"
#include "lpa/rng.hpp"
#include "lpa/tensor.hpp"

namespace lpa {

/// Offsets Δ^(h) the first nine LPA heads are initialized to attend to,
/// as (row, column) steps. Row-major over {-1, 0, 1}².
inline constexpr std::array<std::array<int, 2>, 9> kHeadOffsets{{
    {-1, -1}, {-1, 0}, {-1, 1},
    {0, -1},  {0, 0},  {0, 1},
    {1, -1},  {1, 0},  {1, 1},
}};

/// v_h = α[-1, 2Δ_1, 2Δ_2] for the first min(9, num_heads) heads, zero after.
std::vector<std::array<double, 3>> init_positional_vectors(std::size_t num_heads, double alpha);

struct VanillaLayer {
  std::size_t dim = 0;
  std::size_t num_heads = 0;
  std::vector<Tensor> w_q, w_k, w_v;  // per head, [d × d_h]
  Tensor w_o;                         // [d × d]
  Tensor b_o;                         // [d]

  std::size_t head_dim() const { return dim / num_heads; }
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  /// Normal(0, init_std) projections, zero bias.
  static VanillaLayer create(std::size_t dim, std::size_t num_heads, double init_std, Rng& rng);
};

struct LpaLayer {
  VanillaLayer attention;
  std::vector<Tensor> lambda;  // per head, [1]
  std::vector<Tensor> v;       // per head, [3]
  std::vector<double> alpha;   // locality strength used at init

  std::size_t num_heads() const { return attention.num_heads; }
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  static LpaLayer create(std::size_t dim, std::size_t num_heads, double init_std, double lambda0,
                         double alpha, Rng& rng);
};

using SelfAttention = std::variant<VanillaLayer, LpaLayer>;

const VanillaLayer& base_of(const SelfAttention& layer);

/// Post-softmax maps of one layer, one [B × rows × cols] tensor per head.
/// Self-attention rows are N×N; class attention is 1×(N+1).
struct LayerTrace {
  std::vector<Tensor> heads;
  bool class_attention = false;

  std::size_t batch() const { return heads.front().dim(0); }
  /// Head-averaged map of sample `b`, as [rows × cols].
  Tensor head_mean(std::size_t b) const;
  /// Map of head `h` for sample `b`, as [rows × cols].
  Tensor map(std::size_t h, std::size_t b) const;
};

struct AttentionTrace {
  std::vector<LayerTrace> layers;
};

/// Raw scaled scores Q K^T / sqrt(d_h) for one head, before any softmax.
/// x is [N × d] or [B × N × d]; result is [N × N] or [B × N × N].
Tensor vanilla_scores(const Tensor& x, const VanillaLayer& layer, std::size_t head);

/// softmax_rows(lambda * scores + v · r) for scores [N × N] or [B × N × N].
Tensor lpa_map(const Tensor& scores, const PatchGrid& grid, const Tensor& lambda, const Tensor& v);

/// O = concat_h(map_h · V_h) · W_o + b_o. Appends the per-head maps to
/// `trace` when given. x is [N × d] or [B × N × d]; output has x's shape.
Tensor attention_forward(const Tensor& x, const SelfAttention& layer, const PatchGrid& grid,
                         LayerTrace* trace = nullptr);

/// Class-token attention: row 0 of `tokens` ([N+1 × d] or [B × N+1 × d]) is
/// the sole query over all N+1 tokens. Returns the attended class
/// representation, [d] or [B × d].
Tensor class_attention_forward(const Tensor& tokens, const VanillaLayer& layer,
                               LayerTrace* trace = nullptr);

}  // namespace lpa
