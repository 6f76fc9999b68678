// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <optional>
#include <span>

#include "tmd/density.hpp"
#include "tmd/embedstore.hpp"

namespace tmd::features {

enum class Variant { MD, RMD };
enum class ProbFeatureMode { Product, GeometricMean };

/// Half-open token range [start, end).
struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;
};

struct FeatureVector {
  Eigen::VectorXd layer_scores;           // one ATMD/ATRMD value per layer
  std::optional<double> prob_feature;     // sequence (or claim) probability
  std::optional<double> external_feature;
};

/// Per-layer mean token MD over the whole response.
Eigen::VectorXd atmd(const store::HiddenStates& hidden, std::span<const density::GaussianLayerStats> stats);

/// Per-layer mean token RMD over the whole response.
Eigen::VectorXd atrmd(const store::HiddenStates& hidden, std::span<const density::GaussianLayerStats> in,
                      std::span<const density::GaussianLayerStats> background);

/// Per-layer mean token MD (variant MD) or RMD (variant RMD) over `span`.
/// `background` is ignored for MD.
Eigen::VectorXd span_features(const store::HiddenStates& hidden, TokenSpan span,
                              std::span<const density::GaussianLayerStats> in,
                              std::span<const density::GaussianLayerStats> background, Variant variant);

inline constexpr double kLogProbFloor = -700.0;

/// exp(sum logp) with the sum clamped at -700 (Product), or exp(mean logp)
/// (GeometricMean). Throws DataError on empty input or positive entries.
double sequence_probability(std::span<const float> logprobs, ProbFeatureMode mode = ProbFeatureMode::Product);

/// 1 - sequence_probability (product form).
double msp_uncertainty(std::span<const float> logprobs);

/// exp(-mean logp).
double perplexity(std::span<const float> logprobs);

struct PcaProjector {
  Eigen::VectorXd feature_means;
  Eigen::VectorXd feature_stds;             // degenerate columns carry 1
  Eigen::MatrixXd components;               // n_components x F, orthonormal rows
  Eigen::VectorXd explained_variance_ratio; // per component

  std::size_t n_components() const { return static_cast<std::size_t>(components.rows()); }
  std::size_t n_features() const { return static_cast<std::size_t>(components.cols()); }
};

/// Standardizes the columns of X (population std; near-constant columns keep
/// std 1) and keeps the top min(n_components, F, n-1) right singular vectors,
/// each signed so its largest-magnitude entry is positive.
/// Throws DataError for n < 2 or n_components == 0.
PcaProjector fit_projector(const Eigen::MatrixXd& X, std::size_t n_components);

/// components * ((x - means) / stds). Throws DataError on dimension mismatch.
Eigen::VectorXd project(const PcaProjector& projector, const Eigen::Ref<const Eigen::VectorXd>& x);

}  // namespace tmd::features
