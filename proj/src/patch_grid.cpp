// SPDX-License-Identifier: Apache-2.0

#include "lpa/patch_grid.hpp"

#include <cmath>
#include <string>

namespace lpa {

double PatchGrid::distance(std::size_t i, std::size_t j) const {
  const auto& d = offset(i, j);
  return std::sqrt(static_cast<double>(d[0] * d[0] + d[1] * d[1]));
}

std::size_t PatchGrid::index_of(int x, int y) const {
  if (x < 0 || y < 0 || x >= static_cast<int>(grid_h) || y >= static_cast<int>(grid_w)) return size();
  return static_cast<std::size_t>(x) * grid_w + static_cast<std::size_t>(y);
}

PatchGrid build_patch_grid(std::size_t grid_h, std::size_t grid_w) {
  if (grid_h == 0 || grid_w == 0) {
    throw DimensionError("patch grid must be at least 1x1, got " + std::to_string(grid_h) + "x" +
                         std::to_string(grid_w));
  }
  PatchGrid g;
  g.grid_h = grid_h;
  g.grid_w = grid_w;
  for (std::size_t x = 0; x < grid_h; ++x) {
    for (std::size_t y = 0; y < grid_w; ++y) g.positions.push_back({int(x), int(y)});
  }
  const std::size_t n = g.size();
  g.delta.resize(n * n);
  g.encoding.resize(n * n);
  std::vector<double> flat(n * n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const int dx = g.positions[j][0] - g.positions[i][0];
      const int dy = g.positions[j][1] - g.positions[i][1];
      g.delta[i * n + j] = {dx, dy};
      g.encoding[i * n + j] = {double(dx * dx + dy * dy), double(dx), double(dy)};
      for (std::size_t c = 0; c < 3; ++c) flat[(i * n + j) * 3 + c] = g.encoding[i * n + j][c];
    }
  }
  g.encoding_matrix = Tensor({n * n, 3}, std::move(flat));
  return g;
}

}  // namespace lpa
