// SPDX-License-Identifier: Apache-2.0
//
// Image sets, the synthetic local-texture generator, the IMG1 raw format
// and patch flattening.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpa/tensor.hpp"

namespace lpa {

/// Images stored as one [M × C × H × W] buffer with values in [0, 1].
struct LabeledImageSet {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<double> pixels;
  std::vector<std::size_t> labels;
  std::string split = "train";

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return channels * height * width; }
  std::span<const double> image(std::size_t i) const {
    return {pixels.data() + i * image_numel(), image_numel()};
  }
  /// [B × C × H × W] constant tensor of the selected images.
  Tensor batch(std::span<const std::size_t> indices) const;
  LabeledImageSet subset(std::span<const std::size_t> indices) const;
  /// Indices of every image whose label is in `classes`, in stored order.
  std::vector<std::size_t> indices_of(std::span<const std::size_t> classes) const;
  std::vector<std::size_t> indices_of(std::size_t label) const;
};

struct SynthConfig {
  std::size_t num_classes = 4;
  std::size_t per_class = 40;
  std::size_t image_size = 32;
  std::size_t stamps_per_image = 3;
  double noise = 0.08;
  std::size_t lattice = 4;  // stamp corners are multiples of this; 1 allows any pixel
};

inline constexpr std::size_t kMotifSize = 4;

/// The 4×4 oriented texture that identifies class `label`.
std::array<double, kMotifSize * kMotifSize> texture_motif(std::size_t label);

/// Each image is low-variance noise with copies of its class's 4×4 motif
/// stamped at random non-overlapping lattice positions, so the class
/// evidence is purely local. `anchors` (optional) receives each image's first stamp
/// position as (row, column).
LabeledImageSet synth_local_textures(const SynthConfig& config, std::uint64_t seed,
                                     const std::string& split = "train",
                                     std::vector<std::array<std::size_t, 2>>* anchors = nullptr);

/// IMG1 layout, little-endian: "IMG1", u32 M, u16 C, u16 H, u16 W,
/// u16 num_classes, then M × (u16 label, C·H·W bytes); a byte b reads as b/255.
void write_raw(const std::filesystem::path& path, const LabeledImageSet& set);
LabeledImageSet load_raw(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_raw(const LabeledImageSet& set);
LabeledImageSet decode_raw(std::span<const std::uint8_t> bytes);

/// [C × H × W] image -> [N × C·p²], patches in raster order; each row is
/// channel-major, then pixel row, then pixel column within the patch.
Tensor patchify(std::span<const double> image, std::size_t channels, std::size_t height,
                std::size_t width, std::size_t patch);
/// Inverse of patchify.
std::vector<double> unpatchify(const Tensor& patches, std::size_t channels, std::size_t height,
                               std::size_t width, std::size_t patch);
/// [B × C × H × W] -> [B·N × C·p²].
Tensor patchify_batch(const Tensor& images, std::size_t patch);

}  // namespace lpa
