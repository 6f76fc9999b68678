// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration and the command implementations behind the `tmd` CLI.

#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tmd/regress.hpp"

namespace tmd::pipeline {

struct Paths {
  std::string store;
  std::string background_store;
  std::string manifest;
  std::string model;
  std::string scores;
  std::string report;  // directory for eval/sweep/report outputs
  bool operator==(const Paths&) const = default;
};

struct HuqConfig {
  bool enabled = false;
  std::optional<std::string> external_score;  // U1; MSP when unset
  bool operator==(const HuqConfig&) const = default;
};

struct SweepConfig {
  std::vector<double> tau{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<std::size_t> n_components{2, 5, 10, 20};  // the layer count is always added
  std::vector<std::size_t> train_size;
  bool operator==(const SweepConfig&) const = default;
};

struct RunConfig {
  Paths paths;
  std::string variant = "MD";  // MD | RMD
  bool use_prob_feature = false;
  std::string level = "sequence";  // sequence | claim
  double tau = 0.3;
  std::string quality_metric = "alignscore";
  std::vector<std::string> eval_metrics;  // extra PRR columns
  std::size_t n_components = 10;
  double ridge_base = 1e-6;
  double ols_ridge = 1e-8;
  double split_ratio = 0.5;
  std::uint64_t seed = 0;
  std::string prob_feature_mode = "product";  // product | geometric_mean
  bool raw_selection = false;
  bool refit_unfiltered = false;
  HuqConfig huq;
  SweepConfig sweep;

  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const RunConfig& config);

/// Missing keys keep their defaults; unknown keys and bad values throw DataError.
RunConfig config_from_json(const nlohmann::json& doc);

/// Reads the optional config file (relative paths resolve against its
/// directory), applies `key=value` overrides with dotted keys (values parsed as
/// JSON, else taken as strings; relative paths resolve against `cwd`).
RunConfig load_config(const std::optional<std::filesystem::path>& file, std::span<const std::string> overrides,
                      const std::filesystem::path& cwd);

/// FNV-1a over the canonical JSON form, ignoring output paths; 16 hex digits.
std::string config_checksum(const RunConfig& config);

regress::FitConfig fit_config(const RunConfig& config);

/// Prints one line per validation issue; returns 1 if any, else 0.
int cmd_validate(const RunConfig& config, std::ostream& out);
void cmd_fit(const RunConfig& config, std::ostream& log);
void cmd_score(const RunConfig& config, std::ostream& log);
void cmd_eval(const RunConfig& config, std::ostream& log);
/// axis: layer | tau | n_components | train_size.
void cmd_sweep(const RunConfig& config, const std::string& axis, std::ostream& log);
/// Summarizes eval.json and any sweep tables in the report directory.
void cmd_report(const RunConfig& config, std::ostream& out);

/// Dispatches a verb, mapping errors to exit codes: 1 data, 2 I/O, 3 numerical.
int run(const std::string& verb, const RunConfig& config, const std::string& axis, std::ostream& out,
        std::ostream& err);

/// Exit code for an in-flight exception (call inside a catch block).
int exit_code_for_current_exception(std::ostream& err);

struct ScoreFileRow {
  std::string id;
  std::optional<std::size_t> claim_index;
  double score = 0.0;
};

void write_scores(const std::filesystem::path& path, std::span<const regress::ScoreRow> rows, regress::Level level);
std::vector<ScoreFileRow> read_scores(const std::filesystem::path& path);

}  // namespace tmd::pipeline
