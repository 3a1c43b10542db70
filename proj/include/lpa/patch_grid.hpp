// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "lpa/tensor.hpp"

namespace lpa {

/// Patch coordinates of an image split into grid_h × grid_w patches, in
/// row-major raster order, with pairwise offsets and quadratic encodings.
///
/// A patch's coordinate is (x, y) = (row, column). For a query i and key j,
/// delta(i, j) = [x_j - x_i, y_j - y_i] and
/// encoding(i, j) = [|delta|², delta_x, delta_y].
struct PatchGrid {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<std::array<int, 2>> positions;
  std::vector<std::array<int, 2>> delta;     // N*N, indexed i*N + j
  std::vector<std::array<double, 3>> encoding;  // N*N, indexed i*N + j
  /// encoding as a constant [N²×3] tensor, for projecting onto v_h.
  Tensor encoding_matrix;

  std::size_t size() const { return positions.size(); }
  const std::array<int, 2>& offset(std::size_t i, std::size_t j) const { return delta[i * size() + j]; }
  const std::array<double, 3>& r(std::size_t i, std::size_t j) const { return encoding[i * size() + j]; }
  double distance(std::size_t i, std::size_t j) const;
  /// Index of the patch at (x, y), or size() when off the grid.
  std::size_t index_of(int x, int y) const;
};

PatchGrid build_patch_grid(std::size_t grid_h, std::size_t grid_w);

}  // namespace lpa
