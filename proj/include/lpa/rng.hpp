// SPDX-License-Identifier: Apache-2.0
//
// Named random sub-streams derived from one root seed, so that changing how
// one consumer draws numbers never perturbs another.

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lpa {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t root, std::string_view name, std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(root ^ h) + index);
}

using Rng = std::mt19937_64;

inline Rng make_stream(std::uint64_t root, std::string_view name, std::uint64_t index = 0) {
  return Rng(stream_seed(root, name, index));
}

}  // namespace lpa
