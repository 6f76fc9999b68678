// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

// Correctness-filtered token selection, per-layer Gaussian fitting and
// (relative) Mahalanobis distances.

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tmd/embedstore.hpp"
#include "tmd/manifest.hpp"

namespace tmd::density {

/// Pseudo-metric selecting every token regardless of quality.
inline constexpr std::string_view kAllTokens = "all";

inline constexpr double kDefaultRidge = 1e-6;
inline constexpr double kMaxRidge = 1e-2;

/// Selected tokens keyed by response id; token indices ascending. Iteration
/// order (id lexicographic, token ascending) is the canonical accumulation order.
class TokenSelection {
 public:
  void add(const std::string& id, std::size_t token_count);
  void add_token(const std::string& id, std::size_t token);

  bool empty() const { return total_ == 0; }
  std::size_t size() const { return total_; }
  const std::map<std::string, std::vector<std::size_t>, std::less<>>& by_response() const { return tokens_; }

 private:
  std::map<std::string, std::vector<std::size_t>, std::less<>> tokens_;
  std::size_t total_ = 0;
};

/// Tokens of every train-split response with quality[metric] > tau, or of every
/// train-split response when metric == "all".
/// Throws DataError if a train response lacks the metric or nothing is selected.
TokenSelection select_tokens(const store::Manifest& manifest, std::string_view metric, double tau);

/// Same rule restricted to the given response ids.
TokenSelection select_tokens(const store::Manifest& manifest, std::span<const std::string> ids,
                             std::string_view metric, double tau);

/// All tokens of every response in a store (background statistics).
TokenSelection all_tokens(const store::EmbeddingStore& store);

struct GaussianLayerStats {
  std::size_t layer = 1;   // 1-based decoder layer
  Eigen::VectorXd mu;
  Eigen::MatrixXd chol;    // lower-triangular factor of the regularized covariance
  std::size_t n_samples = 0;
  double ridge = 0.0;      // multiple of the mean covariance diagonal actually added

  std::size_t dim() const { return static_cast<std::size_t>(mu.size()); }
};

/// Fits mean and population covariance of the rows of `samples` (n x d), adds
/// ridge * mean(diag) * I and escalates the ridge tenfold (from ridge_base,
/// at most kMaxRidge) until the Cholesky factorization succeeds.
/// Throws DataError for n < 2 or non-finite input, NumericalError when the
/// factorization fails at the cap.
GaussianLayerStats fit_gaussian(const Eigen::MatrixXd& samples, double ridge_base = kDefaultRidge,
                                std::size_t layer = 1);

/// Squared Mahalanobis distance via two triangular solves.
double mahalanobis(const GaussianLayerStats& stats, const Eigen::Ref<const Eigen::VectorXd>& x);
double mahalanobis(const GaussianLayerStats& stats, const Eigen::Ref<const Eigen::VectorXf>& x);

/// mahalanobis(in, x) - mahalanobis(background, x).
double relative_mahalanobis(const GaussianLayerStats& in, const GaussianLayerStats& background,
                            const Eigen::Ref<const Eigen::VectorXd>& x);
double relative_mahalanobis(const GaussianLayerStats& in, const GaussianLayerStats& background,
                            const Eigen::Ref<const Eigen::VectorXf>& x);

/// One Gaussian per layer over the selected tokens. Layers are fitted in
/// parallel; each layer accumulates sequentially in canonical order.
std::vector<GaussianLayerStats> fit_all_layers(const store::EmbeddingStore& store,
                                               const TokenSelection& tokens,
                                               double ridge_base = kDefaultRidge);

/// Mean over tokens of the layer-`layer` embeddings (1-based layer).
Eigen::VectorXd sequence_embedding(const store::HiddenStates& hidden, std::size_t layer);

/// Gaussian over sequence-mean embeddings of the given responses at one layer
/// (sequence-level MD/RMD baselines).
GaussianLayerStats fit_sequence_gaussian(const store::EmbeddingStore& store,
                                         std::span<const std::string> ids, std::size_t layer,
                                         double ridge_base = kDefaultRidge);

}  // namespace tmd::density
