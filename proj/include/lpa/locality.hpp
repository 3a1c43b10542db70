// SPDX-License-Identifier: Apache-2.0
//
// Analyses over captured attention: the nonlocality measure, attention
// rollout with class-token heat, and the covariance eigenspectrum of
// representations. All functions are pure.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpa/attention.hpp"
#include "lpa/patch_grid.hpp"
#include "lpa/tensor.hpp"

namespace lpa {

class LayerRangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class AlignmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InsufficientSamplesError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NonlocalityReport {
  std::vector<std::vector<double>> per_head;  // [layer][head]
  std::vector<double> per_layer;              // mean over heads
  std::size_t task = 0;
  std::string procedure = "cil";
  std::uint64_t seed = 0;

  std::size_t num_layers() const { return per_layer.size(); }
  double mean() const;
};

/// (1/N) Σ_ij A_ij ‖δ_ij‖ for a map [N × N], averaged over the batch for
/// [B × N × N].
double map_nonlocality(const Tensor& map, const PatchGrid& grid);

/// Every self-attention layer of the trace; class-attention layers are
/// skipped.
NonlocalityReport nonlocality(const AttentionTrace& trace, const PatchGrid& grid);

struct RolloutOptions {
  std::size_t sample = 0;  // which batch element to roll out
  bool residual = false;   // mix 0.5·I into each layer before multiplying
};

struct RolloutMap {
  std::vector<Tensor> cumulative;  // Ã after each self-attention layer of the range, [N × N]
  std::vector<double> class_heat;  // length N; empty unless the range ends on a class layer
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;

  const Tensor& result() const { return cumulative.back(); }
};

/// Ã^(j) = A^(j), Ã^(i) = A^(i) Ã^(i-1) over square [N × N] row-stochastic maps.
std::vector<Tensor> rollout_chain(const std::vector<Tensor>& maps, bool residual = false);

/// Rolls out trace layers [from_layer, to_layer] with heads averaged per
/// layer. When to_layer is the class-attention layer, the class row's patch
/// columns are pushed through the accumulated self-attention product to give
/// the per-patch class heat.
RolloutMap attention_rollout(const AttentionTrace& trace, std::size_t from_layer,
                             std::size_t to_layer, const PatchGrid& grid,
                             const RolloutOptions& options = {});

struct SpectrumReport {
  std::vector<double> eigenvalues;  // descending
  double trace = 0.0;
  std::size_t samples = 0;
  std::size_t dim = 0;
  std::string tag;
  std::uint64_t seed = 0;

  /// Share of the trace held by the k largest eigenvalues.
  double top_mass(std::size_t k) const;
};

/// Eigenvalues of a symmetric n×n row-major matrix by cyclic Jacobi
/// rotations, sorted descending.
std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n);

/// Sample covariance (divisor M-1) of the rows of [M × d].
std::vector<double> covariance(const Tensor& representations);

SpectrumReport covariance_spectrum(const Tensor& representations);
/// Keeps the `k` largest eigenvalues; the trace is left untouched.
SpectrumReport truncate_spectrum(SpectrumReport report, std::size_t k);

struct GapEntry {
  std::size_t task = 0;
  std::size_t layer = 0;
  std::uint64_t seed = 0;
  double gap = 0.0;
};

struct NonlocalityGap {
  std::vector<GapEntry> per_seed;  // sorted by task, layer, seed
  std::vector<GapEntry> seed_mean;  // seed field unused; sorted by task, layer

  /// Mean over layers of the seed-averaged gap at `task`.
  double layer_mean(std::size_t task) const;
};

/// D_cil - D_joint, matched by (task, seed); both sides must cover the same
/// (task, seed) pairs with equal layer counts.
NonlocalityGap nonlocality_gap(std::span<const NonlocalityReport> cil,
                               std::span<const NonlocalityReport> joint);

// Reports.
inline constexpr const char* kReportCsvHeader = "layer,head,task,procedure,seed,value";

/// One row per (layer, head), then a "mean" row per layer.
void write_nonlocality_csv(std::ostream& out, std::span<const NonlocalityReport> reports);
std::string nonlocality_json(const NonlocalityReport& report);
std::string spectrum_json(const SpectrumReport& report);

/// Binary PGM (P5, maxval 255) of a row-major w×h map, min-max normalized;
/// a constant map renders as zeros.
std::vector<std::uint8_t> encode_pgm(std::span<const double> values, std::size_t width,
                                     std::size_t height);
void write_pgm(const std::filesystem::path& path, std::span<const double> values,
               std::size_t width, std::size_t height);

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t maxval = 0;
  std::vector<std::uint8_t> pixels;
};
/// Strict P5 reader; throws FormatError.
PgmImage decode_pgm(std::span<const std::uint8_t> bytes);

}  // namespace lpa
