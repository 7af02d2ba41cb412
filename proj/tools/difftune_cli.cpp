// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line runner. One subcommand per experiment kind; every flag is an
// override of a config key.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "difftune/experiment.hpp"

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitNumericalFailure = 3;

struct Invocation {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;
  std::string seed;
};

void add_common_flags(CLI::App* sub, Invocation& inv) {
  sub->add_option("-c,--config", inv.config_path, "experiment config file")->check(CLI::ExistingFile);
  sub->add_option("-s,--set", inv.overrides, "override a key: section.key=value (repeatable)");
  sub->add_option("-o,--output-dir", inv.output_dir, "same as --set io.output_dir=DIR");
  sub->add_option("--seed", inv.seed, "same as --set experiment.seed=N");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion fine-tuning experiments on low-dimensional synthetic data"};
  app.require_subcommand(1);
  Invocation inv;

  const std::vector<std::pair<const char*, const char*>> kinds = {
      {"pretrain", "train the source model; writes pretrained.ckpt and pretrain_log.csv"},
      {"make_bank", "sample a memory bank from io.pretrained"},
      {"finetune", "fine-tune io.pretrained on the target set; writes finetuned.ckpt and finetune_log.csv"},
      {"forgetting_sweep", "hybrid-sampler sweep over the switch fraction; writes forgetting.csv"},
      {"tau_sweep", "fine-tune once per tau in sweep.taus; writes tau_sweep.csv"},
      {"bank_size_sweep", "fine-tune once per size in sweep.bank_sizes; writes bank_size_sweep.csv"},
      {"eval", "sample a checkpoint and write eval.csv and eval.json"}};
  for (const auto& [name, help] : kinds) add_common_flags(app.add_subcommand(name, help), inv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    difftune::ConfigFile file;
    if (!inv.config_path.empty()) file = difftune::ConfigFile::load(inv.config_path);
    file.set("experiment.kind", app.get_subcommands().front()->get_name());
    for (const auto& o : inv.overrides) file.set_override(o);
    if (!inv.output_dir.empty()) file.set("io.output_dir", inv.output_dir);
    if (!inv.seed.empty()) file.set("experiment.seed", inv.seed);
    const auto config = difftune::ExperimentConfig::from_config(file);
    return difftune::run_experiment(config);
  } catch (const difftune::NumericalError& e) {
    std::cerr << "error: numerical failure: " << e.what() << '\n';
    return kExitNumericalFailure;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const difftune::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
