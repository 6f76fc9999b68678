// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

// Supervised density scores: split, fit Gaussians on the first part, regress
// quality on PCA-reduced layer features of the second part, refit Gaussians.

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tmd/density.hpp"
#include "tmd/embedstore.hpp"
#include "tmd/features.hpp"
#include "tmd/hybrid.hpp"
#include "tmd/manifest.hpp"

namespace tmd::regress {

enum class Level { Sequence, Claim };

struct Split {
  std::vector<std::string> first;   // statistics fit
  std::vector<std::string> second;  // regression fit
};

/// Sorts ids, shuffles them with a seeded Fisher-Yates pass and assigns the
/// first ceil(ratio * n) to `first`. Throws DataError for n < 4, ratio outside
/// (0, 1) or an empty second part.
Split split_train(std::vector<std::string> ids, double ratio, std::uint64_t seed);
Split split_train(const store::Manifest& manifest, double ratio, std::uint64_t seed);

/// Seeded permutation of the sorted ids (same engine as split_train).
std::vector<std::string> shuffled(std::vector<std::string> ids, std::uint64_t seed);

struct OlsResult {
  Eigen::VectorXd weights;
  double intercept = 0.0;
};

/// Minimizes |Xw + b - y|^2 + ridge |w|^2 with an unpenalized intercept.
/// Throws DataError for n < 2, size mismatch or non-finite entries.
OlsResult ols_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double ridge);

struct FitConfig {
  features::Variant variant = features::Variant::MD;
  bool use_prob_feature = false;
  Level level = Level::Sequence;
  std::string quality_metric = "alignscore";
  double tau = 0.3;
  std::size_t n_components = 10;
  double ridge_base = density::kDefaultRidge;
  double ols_ridge = 1e-8;
  double split_ratio = 0.5;
  std::uint64_t seed = 0;
  features::ProbFeatureMode prob_mode = features::ProbFeatureMode::Product;
  bool raw_selection = false;     // every training token enters the Gaussian fit
  bool refit_stats = true;        // re-estimate stats on the whole training set after the regression
  bool refit_unfiltered = false;  // re-estimate on every training token
  bool huq = false;
  std::optional<std::string> huq_external_score;  // otherwise MSP
  std::optional<std::size_t> train_size;          // subsample the training set first
};

struct ModelMetadata {
  std::string quality_metric;
  double tau = 0.0;
  std::uint64_t seed = 0;
  double split_ratio = 0.5;
  double ridge_base = 0.0;
  double ols_ridge = 0.0;
  std::size_t n_components = 0;  // requested
  features::ProbFeatureMode prob_mode = features::ProbFeatureMode::Product;
  bool raw_selection = false;
  bool refit_stats = true;
  bool refit_unfiltered = false;
  std::optional<std::string> huq_external_score;
  std::optional<std::size_t> train_size;
  std::size_t first_size = 0;
  std::size_t second_size = 0;
  bool degenerate = false;  // constant regression targets
  std::vector<std::string> warnings;
  std::string config_checksum;
};

struct UqModel {
  features::Variant variant = features::Variant::MD;
  bool use_prob_feature = false;
  Level level = Level::Sequence;
  std::vector<density::GaussianLayerStats> layer_stats;
  std::optional<std::vector<density::GaussianLayerStats>> bg_stats;
  features::PcaProjector projector;
  Eigen::VectorXd weights;
  double intercept = 0.0;
  std::optional<hybrid::HuqParams> huq;
  ModelMetadata meta;

  std::size_t num_layers() const { return layer_stats.size(); }
  std::size_t dim() const { return layer_stats.empty() ? 0 : layer_stats.front().dim(); }
};

/// One scored unit: a whole response or one claim of it.
struct ScoreRow {
  std::string id;
  std::optional<std::size_t> claim_index;
  double density_score = 0.0;  // regression output
  std::optional<double> base_score;  // HUQ u1 when the model carries HUQ
  double score = 0.0;          // final uncertainty, higher = more uncertain
};

struct FitResult {
  UqModel model;
  std::vector<double> first_ridges;  // per layer, stats fit on the first part
  std::vector<double> final_ridges;  // per layer, after re-estimation
  std::vector<std::string> first_ids;
  std::vector<std::string> second_ids;
  std::vector<double> second_predictions;  // fit-time predictions on the second part
  std::vector<double> second_targets;
};

/// Background statistics over all tokens of a background store.
std::vector<density::GaussianLayerStats> fit_background(const store::EmbeddingStore& background,
                                                        double ridge_base);

/// Runs the five fitting steps. `background` is required for the RMD variant.
FitResult fit_supervised(const store::EmbeddingStore& store, const store::Manifest& manifest,
                         const store::EmbeddingStore* background, const FitConfig& config);

/// Layer features of one span under the model's statistics.
Eigen::VectorXd density_features(const UqModel& model, const store::HiddenStates& hidden,
                                 features::TokenSpan span);

/// w . [project(features); prob] + b.
double predict(const UqModel& model, const Eigen::VectorXd& layer_features, std::optional<double> prob);

/// Scores one response: a single row at sequence level, one row per claim at
/// claim level. Throws DataError on shape mismatch or missing log-probabilities.
std::vector<ScoreRow> score_response(const UqModel& model, const store::EmbeddingStore& store,
                                     const store::ManifestEntry& entry);

/// Scores the given responses in parallel; rows follow the order of `ids`.
std::vector<ScoreRow> score_responses(const UqModel& model, const store::EmbeddingStore& store,
                                      const store::Manifest& manifest, std::span<const std::string> ids);

/// Throws DataError unless the store's layer count and width match the model.
void check_compatible(const UqModel& model, const store::EmbeddingStore& store);

}  // namespace tmd::regress
