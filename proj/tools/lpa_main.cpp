// SPDX-License-Identifier: Apache-2.0
//
// lpa — run the class-incremental experiments and analyses.
//
// Exit codes: 0 success, 2 config or usage error, 3 I/O or format error,
// 4 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lpa/experiment.hpp"

namespace {

constexpr int kConfigExit = 2;
constexpr int kIoExit = 3;
constexpr int kNumericalExit = 4;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value config file");
  cmd->add_option("--seed", c.seed, "run this seed only");
  cmd->add_option("--out", c.out, "output directory (overrides output.dir)");
  cmd->add_option("--set", c.overrides, "key=value override, repeatable");
}

lpa::RunConfig resolve(const Common& c) {
  lpa::RunConfig config = c.config.empty() ? lpa::parse_config("") : lpa::load_config(c.config);
  for (const auto& o : c.overrides) lpa::apply_override(config, o);
  if (c.seed) config.seeds = {*c.seed};
  if (!c.out.empty()) config.output_dir = c.out;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Locality-preserved attention: class-incremental experiments"};
  app.require_subcommand(1);

  Common common;
  auto* cil = app.add_subcommand("train-cil", "class-incremental training with per-task reports");
  auto* joint = app.add_subcommand("train-joint", "joint training on every presented-task union");
  auto* lambda = app.add_subcommand("ablate-lambda", "Avg accuracy against the content weight lambda0");
  auto* layers = app.add_subcommand("ablate-lpa-layers", "Avg accuracy against the LPA layer count");
  for (auto* cmd : {cil, joint, lambda, layers}) add_common(cmd, common);

  std::vector<double> lambdas{0.02, 1.0};
  lambda->add_option("--lambdas", lambdas, "comma-separated lambda0 values")->delimiter(',');
  std::vector<std::size_t> counts{0, 5};
  layers->add_option("--counts", counts, "comma-separated LPA layer counts")->delimiter(',');

  std::string checkpoint, images, out_dir = ".";
  std::size_t index = 0;
  bool residual = false;
  auto* rollout = app.add_subcommand("rollout", "class-token attention rollout of one image");
  rollout->add_option("--checkpoint", checkpoint)->required();
  rollout->add_option("--image", images, "IMG1 file")->required();
  rollout->add_option("--index", index, "image within the file");
  rollout->add_flag("--residual", residual, "mix 0.5 I into each layer");
  rollout->add_option("--out", out_dir);

  Common spec_common;
  std::string dataset;
  auto* spectrum = app.add_subcommand("spectrum", "representation covariance spectrum");
  spectrum->add_option("--checkpoint", checkpoint)->required();
  spectrum->add_option("--dataset", dataset, "IMG1 file (default: the config's synthetic test split)");
  add_common(spectrum, spec_common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    std::filesystem::path log;
    if (*cil) {
      log = lpa::command_train_cil(resolve(common));
    } else if (*joint) {
      log = lpa::command_train_joint(resolve(common));
    } else if (*lambda) {
      log = lpa::command_ablate_lambda(resolve(common), lambdas);
    } else if (*layers) {
      log = lpa::command_ablate_lpa_layers(resolve(common), counts);
    } else if (*rollout) {
      log = lpa::command_rollout(checkpoint, images, index, residual, out_dir);
    } else if (*spectrum) {
      const auto config = resolve(spec_common);
      const auto set = dataset.empty() ? lpa::load_datasets(config, config.seeds.front()).test
                                       : lpa::load_raw(dataset);
      log = lpa::command_spectrum(checkpoint, set, config.output_dir);
    }
    std::cout << log.string() << "\n";
    return 0;
  } catch (const lpa::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const lpa::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIoExit;
  } catch (const lpa::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kIoExit;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIoExit;
  } catch (const lpa::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumericalExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
