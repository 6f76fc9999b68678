// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tmd/features.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

#include "tmd/error.hpp"

namespace tmd::features {

namespace {

void check_logprobs(std::span<const float> logprobs) {
  if (logprobs.empty()) throw DataError("empty generation: no log-probabilities");
  for (float lp : logprobs) {
    if (!(lp <= 0.0f)) throw DataError("log-probabilities must be finite and <= 0");
  }
}

double logprob_sum(std::span<const float> logprobs) {
  double sum = 0.0;
  for (float lp : logprobs) sum += static_cast<double>(lp);
  return sum;
}

}  // namespace

Eigen::VectorXd span_features(const store::HiddenStates& hidden, TokenSpan span,
                              std::span<const density::GaussianLayerStats> in,
                              std::span<const density::GaussianLayerStats> background, Variant variant) {
  if (hidden.tokens() == 0) throw DataError("empty generation");
  if (span.start >= span.end) throw DataError("empty span");
  if (span.end > hidden.tokens()) throw DataError("span exceeds token count");
  if (in.size() != hidden.layers()) throw DataError("layer count mismatch between stats and hidden states");
  if (variant == Variant::RMD && background.size() != in.size()) {
    throw DataError("layer count mismatch between in-domain and background stats");
  }

  const std::size_t layers = in.size();
  Eigen::VectorXd out(static_cast<Eigen::Index>(layers));
  const auto count = static_cast<double>(span.end - span.start);
  for (std::size_t l = 0; l < layers; ++l) {
    double sum = 0.0;
    for (std::size_t t = span.start; t < span.end; ++t) {
      const auto h = hidden.at(t, l + 1);
      sum += variant == Variant::MD ? density::mahalanobis(in[l], h)
                                    : density::relative_mahalanobis(in[l], background[l], h);
    }
    out(static_cast<Eigen::Index>(l)) = sum / count;
  }
  return out;
}

Eigen::VectorXd atmd(const store::HiddenStates& hidden, std::span<const density::GaussianLayerStats> stats) {
  return span_features(hidden, {0, hidden.tokens()}, stats, {}, Variant::MD);
}

Eigen::VectorXd atrmd(const store::HiddenStates& hidden, std::span<const density::GaussianLayerStats> in,
                      std::span<const density::GaussianLayerStats> background) {
  return span_features(hidden, {0, hidden.tokens()}, in, background, Variant::RMD);
}

double sequence_probability(std::span<const float> logprobs, ProbFeatureMode mode) {
  check_logprobs(logprobs);
  const double sum = logprob_sum(logprobs);
  if (mode == ProbFeatureMode::GeometricMean) return std::exp(sum / static_cast<double>(logprobs.size()));
  return std::exp(std::max(sum, kLogProbFloor));
}

double msp_uncertainty(std::span<const float> logprobs) {
  return 1.0 - sequence_probability(logprobs, ProbFeatureMode::Product);
}

double perplexity(std::span<const float> logprobs) {
  check_logprobs(logprobs);
  return std::exp(-logprob_sum(logprobs) / static_cast<double>(logprobs.size()));
}

PcaProjector fit_projector(const Eigen::MatrixXd& X, std::size_t n_components) {
  const Eigen::Index n = X.rows();
  const Eigen::Index f = X.cols();
  if (n < 2) throw DataError("PCA needs at least 2 rows");
  if (n_components == 0) throw DataError("PCA needs at least one component");
  if (f == 0) throw DataError("PCA needs at least one feature");
  if (!X.allFinite()) throw DataError("non-finite feature value");

  PcaProjector p;
  p.feature_means = X.colwise().mean().transpose();
  Eigen::MatrixXd Z = X.rowwise() - p.feature_means.transpose();
  p.feature_stds = (Z.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt().transpose();
  for (Eigen::Index j = 0; j < f; ++j) {
    const double scale = std::max(1.0, std::abs(p.feature_means(j)));
    if (!(p.feature_stds(j) > 1e-12 * scale)) p.feature_stds(j) = 1.0;
  }
  Z = Z.array().rowwise() / p.feature_stds.transpose().array();

  const auto keep = static_cast<Eigen::Index>(
      std::min<std::size_t>({n_components, static_cast<std::size_t>(f), static_cast<std::size_t>(n - 1)}));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Z, Eigen::ComputeThinV);
  p.components = svd.matrixV().leftCols(keep).transpose();
  for (Eigen::Index k = 0; k < keep; ++k) {
    Eigen::Index arg = 0;
    p.components.row(k).cwiseAbs().maxCoeff(&arg);
    if (p.components(k, arg) < 0.0) p.components.row(k) *= -1.0;
  }

  const Eigen::VectorXd var = svd.singularValues().array().square();
  const double total = var.sum();
  p.explained_variance_ratio =
      total > 0.0 ? Eigen::VectorXd(var.head(keep) / total) : Eigen::VectorXd(Eigen::VectorXd::Zero(keep));
  return p;
}

Eigen::VectorXd project(const PcaProjector& projector, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (static_cast<std::size_t>(x.size()) != projector.n_features()) {
    throw DataError("dimension mismatch: projector expects " + std::to_string(projector.n_features()) +
                    " features, got " + std::to_string(x.size()));
  }
  const Eigen::VectorXd z = (x - projector.feature_means).cwiseQuotient(projector.feature_stds);
  return projector.components * z;
}

}  // namespace tmd::features
