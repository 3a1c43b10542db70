// SPDX-License-Identifier: Apache-2.0
//
// Five self-attention blocks followed by one class-attention block. The
// first `lpa_layers` blocks (shallowest first) use locality-preserved
// attention; the rest are vanilla.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lpa/attention.hpp"
#include "lpa/patch_grid.hpp"
#include "lpa/rng.hpp"
#include "lpa/tensor.hpp"

namespace lpa {

inline constexpr std::size_t kSelfAttentionBlocks = 5;

struct BackboneConfig {
  std::size_t channels = 1;
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t dim = 72;
  std::size_t num_heads = 9;
  std::size_t ffn_hidden = 0;  // 0 means 4·dim
  std::size_t lpa_layers = kSelfAttentionBlocks;
  double lambda0 = 0.02;
  double alpha = 1.0;
  double init_std = 0.02;
  // Pixels enter the patch embedding as (x - input_mean) / input_std.
  double input_mean = 0.5;
  double input_std = 0.25;

  std::size_t grid_side() const { return image_size / patch_size; }
  std::size_t hidden() const { return ffn_hidden ? ffn_hidden : 4 * dim; }
  void validate() const;
};

struct FeedForward {
  Tensor w1, b1, w2, b2;
};

struct TransformerBlock {
  SelfAttention attention;
  Tensor norm1_g, norm1_b, norm2_g, norm2_b;
  FeedForward ffn;
};

struct ClassAttentionBlock {
  VanillaLayer attention;
  Tensor norm1_g, norm1_b, norm2_g, norm2_b;
  FeedForward ffn;
};

struct BackboneOutput {
  Tensor logits;          // [B × classes]; undefined before any class is registered
  Tensor representation;  // [B × d], the normalized class token
  AttentionTrace trace;   // five self-attention layers, then the class-attention layer
};

class Backbone {
 public:
  static Backbone create(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }
  const PatchGrid& grid() const { return grid_; }
  std::size_t num_classes() const { return head_w_.defined() ? head_w_.dim(1) : 0; }

  /// Appends `count` classifier columns, keeping the existing ones.
  void add_classes(std::size_t count, Rng& rng);

  /// images: [B × C × H × W].
  BackboneOutput forward(const Tensor& images, bool capture_trace = false) const;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;

  /// Independent deep copy; `trainable` sets requires_grad on every parameter.
  Backbone clone(bool trainable = true) const;

  const std::vector<TransformerBlock>& blocks() const { return blocks_; }
  std::vector<TransformerBlock>& blocks() { return blocks_; }
  ClassAttentionBlock& class_block() { return class_block_; }

 private:
  friend Backbone load_checkpoint(const std::filesystem::path& path);
  friend Backbone decode_checkpoint(std::span<const std::uint8_t> bytes);
  Backbone() = default;
  void rebuild_grid();
  template <typename Self, typename Fn>
  static void visit_parameters(Self& self, Fn&& fn);

  BackboneConfig config_;
  PatchGrid grid_;
  Tensor patch_w_, patch_b_, pos_embed_, cls_token_;
  std::vector<TransformerBlock> blocks_;
  ClassAttentionBlock class_block_;
  Tensor norm_g_, norm_b_;
  Tensor head_w_, head_b_;
};

/// "LPA1", u32 layers, heads, d, grid, then tensors as (u32 name length,
/// name, u32 rank, u32 dims..., raw little-endian doubles).
std::vector<std::uint8_t> encode_checkpoint(const Backbone& model);
Backbone decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Backbone& model);
Backbone load_checkpoint(const std::filesystem::path& path);

}  // namespace lpa
