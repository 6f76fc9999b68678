// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

// tmd: fit, apply and evaluate token-level Mahalanobis uncertainty scores.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tmd/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Token-level Mahalanobis-distance uncertainty toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string axis;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "RunConfig JSON file");
    cmd->add_option("-s,--set", overrides, "Override a config key, e.g. --set tau=0.5 --set paths.store=a.tmd");
  };
  for (const char* verb : {"validate", "fit", "score", "eval", "report", "config"}) {
    std::string help;
    if (std::string(verb) == "validate") help = "Cross-check a store against its manifest";
    if (std::string(verb) == "fit") help = "Fit a supervised uncertainty model";
    if (std::string(verb) == "score") help = "Score the test split with a fitted model";
    if (std::string(verb) == "eval") help = "Evaluate scores against quality and baselines";
    if (std::string(verb) == "report") help = "Summarize the report directory";
    if (std::string(verb) == "config") help = "Print the resolved configuration";
    add_common(app.add_subcommand(verb, help));
  }
  CLI::App* sweep = app.add_subcommand("sweep", "Layer or hyperparameter sweep");
  add_common(sweep);
  sweep->add_option("-a,--axis", axis, "layer | tau | n_components | train_size")
      ->required()
      ->check(CLI::IsMember({"layer", "tau", "n_components", "train_size"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string verb = app.get_subcommands().front()->get_name();
  tmd::pipeline::RunConfig config;
  try {
    std::optional<std::filesystem::path> file;
    if (!config_path.empty()) file = config_path;
    config = tmd::pipeline::load_config(file, overrides, std::filesystem::current_path());
  } catch (...) {
    return tmd::pipeline::exit_code_for_current_exception(std::cerr);
  }

  if (verb == "config") {
    std::cout << tmd::pipeline::to_json(config).dump(2) << "\n";
    return 0;
  }
  return tmd::pipeline::run(verb, config, axis, std::cout, std::cerr);
}
