// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and the experiment drivers behind the `lpa` command.
//
// A config is a line-oriented text file of `key = value` pairs with dotted
// keys; `#` starts a comment. Every key has a default, unknown keys are
// rejected, and config_text() prints the effective config in a form that
// parse_config() reads back unchanged.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lpa/cil.hpp"
#include "lpa/dataset.hpp"

namespace lpa {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::size_t base = 2;
  std::size_t increment = 2;
  bool shuffle_classes = true;

  std::string kind = "lpa";  // lpa | vanilla
  BackboneConfig model = desk_model();
  TrainConfig train = desk_train();
  std::size_t capacity = 40;
  std::string classifier = "nme";  // nme | logits
  std::size_t probe_per_class = 4;

  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  std::string source = "synthetic";  // synthetic | img1
  SynthConfig synth;
  std::size_t test_per_class = 20;
  std::string train_path;
  std::string test_path;

  std::string output_dir = "runs";

  /// The harness configuration this run config describes.
  CilConfig cil() const;

  static BackboneConfig desk_model();
  static TrainConfig desk_train();
};

/// Applies the `key = value` lines of `text` on top of `base`.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
/// One `key=value` override.
void apply_override(RunConfig& config, std::string_view assignment);
/// Effective config, one `key = value` line per field in a fixed order.
std::string config_text(const RunConfig& config);
/// Every recognised key, in config_text() order.
std::vector<std::string> config_keys();

struct Datasets {
  LabeledImageSet train;
  LabeledImageSet test;
};

/// Synthetic sets are drawn from `seed`; IMG1 sets are read from disk.
Datasets load_datasets(const RunConfig& config, std::uint64_t seed);

/// One (setting, seed) outcome of an ablation.
struct AblationRow {
  double setting = 0.0;
  std::uint64_t seed = 0;
  CilMetrics metrics;
};

struct AblationSummary {
  double setting = 0.0;
  std::size_t seeds = 0;
  double avg = 0.0;
  double last = 0.0;
  double forgetting = 0.0;
};

/// Seed means per setting, in first-appearance order.
std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows);

/// CIL runs over settings × seeds with `model.lambda0` set to each value.
std::vector<AblationRow> ablate_lambda(const RunConfig& config, const std::vector<double>& lambdas);
/// CIL runs over settings × seeds with `model.lpa_layers` set to each count.
std::vector<AblationRow> ablate_lpa_layers(const RunConfig& config,
                                           const std::vector<std::size_t>& counts);

/// Writes config.txt, run_log.json and per-seed reports under the output
/// directory. Returns the run log path.
std::filesystem::path command_train_cil(const RunConfig& config);
std::filesystem::path command_train_joint(const RunConfig& config);
std::filesystem::path command_ablate_lambda(const RunConfig& config, const std::vector<double>& lambdas);
std::filesystem::path command_ablate_lpa_layers(const RunConfig& config,
                                                const std::vector<std::size_t>& counts);
/// rollout.pgm and rollout.json for image `index` of an IMG1 file.
std::filesystem::path command_rollout(const std::filesystem::path& checkpoint,
                                      const std::filesystem::path& images, std::size_t index,
                                      bool residual, const std::filesystem::path& out_dir);
/// spectrum.json of the representation covariance over `images` (top 100).
std::filesystem::path command_spectrum(const std::filesystem::path& checkpoint,
                                       const LabeledImageSet& images, const std::filesystem::path& out_dir,
                                       std::size_t top = 100);

}  // namespace lpa
