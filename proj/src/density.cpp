// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tmd/density.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "tmd/error.hpp"
#include "tmd/parallel.hpp"

namespace tmd::density {

namespace {

using RowChunk = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ChunkSink = std::function<void(const RowChunk&)>;
// Feeds sample rows to the sink in a fixed order; may be invoked more than once.
using ChunkSource = std::function<void(const ChunkSink&)>;

constexpr Eigen::Index kChunkRows = 2048;

GaussianLayerStats fit_streaming(const ChunkSource& source, std::size_t dim, double ridge_base,
                                 std::size_t layer) {
  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  std::size_t n = 0;
  bool finite = true;
  source([&](const RowChunk& chunk) {
    finite = finite && chunk.allFinite();
    sum += chunk.colwise().sum().transpose();
    n += static_cast<std::size_t>(chunk.rows());
  });
  if (n < 2) throw DataError("insufficient samples: need at least 2, got " + std::to_string(n));
  if (!finite) throw DataError("non-finite value in Gaussian fit input");

  GaussianLayerStats stats;
  stats.layer = layer;
  stats.n_samples = n;
  stats.mu = sum / static_cast<double>(n);

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  source([&](const RowChunk& chunk) {
    const Eigen::MatrixXd centered = chunk.rowwise() - stats.mu.transpose();
    cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
  });
  cov /= static_cast<double>(n);
  cov = cov.selfadjointView<Eigen::Lower>();

  double mean_diag = cov.diagonal().mean();
  if (!(mean_diag > 0.0)) mean_diag = 1.0;

  double lambda = ridge_base;
  for (;;) {
    Eigen::MatrixXd reg = cov;
    reg.diagonal().array() += lambda * mean_diag;
    Eigen::LLT<Eigen::MatrixXd> llt(reg);
    if (llt.info() == Eigen::Success) {
      Eigen::MatrixXd chol = llt.matrixL();
      const auto diag = chol.diagonal().array();
      if ((diag > 0.0).all() && chol.allFinite()) {
        stats.chol = std::move(chol);
        stats.ridge = lambda;
        return stats;
      }
    }
    const double next = lambda == 0.0 ? kDefaultRidge : lambda * 10.0;
    if (next > kMaxRidge * (1.0 + 1e-9)) {
      throw NumericalError("covariance of layer " + std::to_string(layer) +
                           " is not positive definite at the ridge cap");
    }
    lambda = next;
  }
}

void check_input(const GaussianLayerStats& stats, Eigen::Index size, bool finite) {
  if (static_cast<std::size_t>(size) != stats.dim()) {
    throw DataError("dimension mismatch: expected " + std::to_string(stats.dim()) + ", got " +
                    std::to_string(size));
  }
  if (!finite) throw DataError("non-finite input to Mahalanobis distance");
}

double solve_distance(const GaussianLayerStats& stats, Eigen::VectorXd diff) {
  stats.chol.triangularView<Eigen::Lower>().solveInPlace(diff);
  return diff.squaredNorm();
}

}  // namespace

void TokenSelection::add(const std::string& id, std::size_t token_count) {
  if (token_count == 0) return;
  auto& tokens = tokens_[id];
  total_ -= tokens.size();
  tokens.resize(token_count);
  std::iota(tokens.begin(), tokens.end(), std::size_t{0});
  total_ += token_count;
}

void TokenSelection::add_token(const std::string& id, std::size_t token) {
  auto& tokens = tokens_[id];
  auto it = std::lower_bound(tokens.begin(), tokens.end(), token);
  if (it != tokens.end() && *it == token) return;
  tokens.insert(it, token);
  ++total_;
}

TokenSelection select_tokens(const store::Manifest& manifest, std::span<const std::string> ids,
                             std::string_view metric, double tau) {
  TokenSelection out;
  const bool take_all = metric == kAllTokens;
  for (const std::string& id : ids) {
    const store::ManifestEntry& e = manifest.at(id);
    if (take_all || e.quality_of(metric) > tau) out.add(e.id, e.token_count);
  }
  if (out.empty()) {
    throw DataError("empty token selection: no response has " + std::string(metric) + " > " +
                    std::to_string(tau) + "; lower tau");
  }
  return out;
}

TokenSelection select_tokens(const store::Manifest& manifest, std::string_view metric, double tau) {
  const auto ids = manifest.train_ids();
  return select_tokens(manifest, ids, metric, tau);
}

TokenSelection all_tokens(const store::EmbeddingStore& store) {
  TokenSelection out;
  for (const auto& [id, r] : store.responses()) {
    if (r.hidden) out.add(id, r.tokens);
  }
  return out;
}

GaussianLayerStats fit_gaussian(const Eigen::MatrixXd& samples, double ridge_base, std::size_t layer) {
  const ChunkSource source = [&](const ChunkSink& sink) {
    for (Eigen::Index start = 0; start < samples.rows(); start += kChunkRows) {
      const Eigen::Index rows = std::min(kChunkRows, samples.rows() - start);
      sink(samples.middleRows(start, rows));
    }
  };
  return fit_streaming(source, static_cast<std::size_t>(samples.cols()), ridge_base, layer);
}

double mahalanobis(const GaussianLayerStats& stats, const Eigen::Ref<const Eigen::VectorXd>& x) {
  check_input(stats, x.size(), x.allFinite());
  return solve_distance(stats, x - stats.mu);
}

double mahalanobis(const GaussianLayerStats& stats, const Eigen::Ref<const Eigen::VectorXf>& x) {
  check_input(stats, x.size(), x.allFinite());
  return solve_distance(stats, x.cast<double>() - stats.mu);
}

double relative_mahalanobis(const GaussianLayerStats& in, const GaussianLayerStats& background,
                            const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (in.dim() != background.dim()) throw DataError("dimension mismatch between in-domain and background stats");
  return mahalanobis(in, x) - mahalanobis(background, x);
}

double relative_mahalanobis(const GaussianLayerStats& in, const GaussianLayerStats& background,
                            const Eigen::Ref<const Eigen::VectorXf>& x) {
  if (in.dim() != background.dim()) throw DataError("dimension mismatch between in-domain and background stats");
  return mahalanobis(in, x) - mahalanobis(background, x);
}

std::vector<GaussianLayerStats> fit_all_layers(const store::EmbeddingStore& store,
                                               const TokenSelection& tokens, double ridge_base) {
  if (tokens.empty()) throw DataError("empty token selection");
  for (const auto& [id, idx] : tokens.by_response()) {
    const store::HiddenStates h = store.hidden(id);
    if (!idx.empty() && idx.back() >= h.tokens()) {
      throw DataError("response '" + id + "': selected token " + std::to_string(idx.back()) +
                      " beyond its " + std::to_string(h.tokens()) + " tokens");
    }
  }

  const std::size_t layers = store.num_layers();
  const auto dim = static_cast<Eigen::Index>(store.dim());
  std::vector<GaussianLayerStats> out(layers);
  parallel_for(layers, [&](std::size_t i) {
    const std::size_t layer = i + 1;
    const ChunkSource source = [&](const ChunkSink& sink) {
      RowChunk chunk(kChunkRows, dim);
      Eigen::Index filled = 0;
      for (const auto& [id, idx] : tokens.by_response()) {
        const store::HiddenStates h = store.hidden(id);
        for (std::size_t t : idx) {
          chunk.row(filled++) = h.at(t, layer).cast<double>().transpose();
          if (filled == kChunkRows) {
            sink(chunk);
            filled = 0;
          }
        }
      }
      if (filled > 0) sink(chunk.topRows(filled));
    };
    out[i] = fit_streaming(source, store.dim(), ridge_base, layer);
  });
  return out;
}

Eigen::VectorXd sequence_embedding(const store::HiddenStates& hidden, std::size_t layer) {
  if (hidden.tokens() == 0) throw DataError("empty generation");
  if (layer < 1 || layer > hidden.layers()) throw DataError("layer index out of range");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden.dim()));
  for (std::size_t t = 0; t < hidden.tokens(); ++t) sum += hidden.at(t, layer).cast<double>();
  return sum / static_cast<double>(hidden.tokens());
}

GaussianLayerStats fit_sequence_gaussian(const store::EmbeddingStore& store,
                                         std::span<const std::string> ids, std::size_t layer,
                                         double ridge_base) {
  const auto dim = static_cast<Eigen::Index>(store.dim());
  const ChunkSource source = [&](const ChunkSink& sink) {
    RowChunk chunk(kChunkRows, dim);
    Eigen::Index filled = 0;
    for (const std::string& id : ids) {
      chunk.row(filled++) = sequence_embedding(store.hidden(id), layer).transpose();
      if (filled == kChunkRows) {
        sink(chunk);
        filled = 0;
      }
    }
    if (filled > 0) sink(chunk.topRows(filled));
  };
  return fit_streaming(source, store.dim(), ridge_base, layer);
}

}  // namespace tmd::density
