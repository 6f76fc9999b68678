// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tmd/regress.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <random>

#include "tmd/error.hpp"
#include "tmd/parallel.hpp"

namespace tmd::regress {

namespace {

constexpr std::uint64_t kSubsampleSalt = 0x9e3779b97f4a7c15ULL;

// Uniform draw in [0, bound) by rejection, independent of the standard
// library's distribution implementation.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  for (;;) {
    const std::uint64_t x = rng();
    if (x < limit) return x % bound;
  }
}

struct Unit {
  std::string id;
  std::optional<std::size_t> claim_index;
  features::TokenSpan span;
  double target = 0.0;   // regression target, higher = worse
  double quality = 0.0;  // higher = better, used for HUQ tuning
};

std::span<const float> span_logprobs(const store::EmbeddingStore& store, const std::string& id,
                                     features::TokenSpan span) {
  const auto lp = store.logprob(id);
  if (span.end > lp.size()) throw DataError("span exceeds log-probability count for '" + id + "'");
  return lp.subspan(span.start, span.end - span.start);
}

double base_uncertainty(const std::optional<std::string>& external, const store::EmbeddingStore& store,
                        const store::ManifestEntry& entry, std::optional<std::size_t> claim_index,
                        features::TokenSpan span) {
  if (!external) return 1.0 - features::sequence_probability(span_logprobs(store, entry.id, span));
  const auto& scores = claim_index ? entry.claims[*claim_index].external_scores : entry.external_scores;
  const auto it = scores.find(*external);
  if (it == scores.end()) {
    throw DataError("response '" + entry.id + "' lacks external score '" + *external + "'");
  }
  return it->second;
}

std::vector<Unit> training_units(const store::Manifest& manifest, std::span<const std::string> ids,
                                 const FitConfig& config) {
  std::vector<Unit> units;
  for (const std::string& id : ids) {
    const store::ManifestEntry& e = manifest.at(id);
    if (config.level == Level::Sequence) {
      const double q = e.quality_of(config.quality_metric);
      units.push_back({id, std::nullopt, {0, e.token_count}, -q, q});
      continue;
    }
    for (std::size_t c = 0; c < e.claims.size(); ++c) {
      const store::Claim& claim = e.claims[c];
      if (!claim.label) continue;
      const double y = *claim.label == store::ClaimLabel::Nonfactual ? 1.0 : 0.0;
      units.push_back({id, c, {claim.span_start, claim.span_end}, y, 1.0 - y});
    }
  }
  if (units.empty()) throw DataError("no labeled training units in the second split");
  return units;
}

density::TokenSelection selection_for(const store::Manifest& manifest, std::span<const std::string> ids,
                                      const FitConfig& config, bool unfiltered) {
  if (unfiltered || config.raw_selection) {
    return density::select_tokens(manifest, ids, density::kAllTokens, config.tau);
  }
  if (config.level == Level::Sequence) {
    return density::select_tokens(manifest, ids, config.quality_metric, config.tau);
  }
  density::TokenSelection out;
  for (const std::string& id : ids) {
    for (const store::Claim& claim : manifest.at(id).claims) {
      if (claim.label != store::ClaimLabel::Factual) continue;
      for (std::size_t t = claim.span_start; t < claim.span_end; ++t) out.add_token(id, t);
    }
  }
  if (out.empty()) throw DataError("empty token selection: no factual claims among training responses");
  return out;
}

std::vector<double> ridges(std::span<const density::GaussianLayerStats> stats) {
  std::vector<double> out;
  for (const auto& s : stats) out.push_back(s.ridge);
  return out;
}

void check_shape(const store::EmbeddingStore& a, const store::EmbeddingStore& b, const char* what) {
  if (a.num_layers() != b.num_layers() || a.dim() != b.dim()) {
    throw DataError(std::string("dimension mismatch: ") + what + " has L=" + std::to_string(b.num_layers()) +
                    ", d=" + std::to_string(b.dim()) + ", expected L=" + std::to_string(a.num_layers()) +
                    ", d=" + std::to_string(a.dim()));
  }
}

}  // namespace

std::vector<std::string> shuffled(std::vector<std::string> ids, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) {
    std::swap(ids[i - 1], ids[bounded(rng, i)]);
  }
  return ids;
}

Split split_train(std::vector<std::string> ids, double ratio, std::uint64_t seed) {
  const std::size_t n = ids.size();
  if (n < 4) throw DataError("too few training responses: need at least 4, got " + std::to_string(n));
  if (!(ratio > 0.0 && ratio < 1.0)) throw DataError("split ratio must lie in (0, 1)");
  const double raw = ratio * static_cast<double>(n);
  const double nearest = std::round(raw);
  const auto n1 = static_cast<std::size_t>(std::abs(raw - nearest) < 1e-9 ? nearest : std::ceil(raw));
  if (n1 >= n) throw DataError("empty second split");
  ids = shuffled(std::move(ids), seed);
  Split out;
  out.first.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n1));
  out.second.assign(ids.begin() + static_cast<std::ptrdiff_t>(n1), ids.end());
  return out;
}

Split split_train(const store::Manifest& manifest, double ratio, std::uint64_t seed) {
  return split_train(manifest.train_ids(), ratio, seed);
}

OlsResult ols_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double ridge) {
  const Eigen::Index n = X.rows();
  const Eigen::Index k = X.cols();
  if (n < 2) throw DataError("regression needs at least 2 rows");
  if (y.size() != n) throw DataError("regression target length mismatch");
  if (!X.allFinite() || !y.allFinite()) throw DataError("non-finite regression input");
  if (!(ridge >= 0.0)) throw DataError("ridge must be non-negative");

  const Eigen::RowVectorXd x_mean = X.colwise().mean();
  const double y_mean = y.mean();
  Eigen::MatrixXd A(n + k, k);
  A.topRows(n) = X.rowwise() - x_mean;
  A.bottomRows(k) = std::sqrt(ridge) * Eigen::MatrixXd::Identity(k, k);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n + k);
  b.head(n) = y.array() - y_mean;

  OlsResult out;
  out.weights = k == 0 ? Eigen::VectorXd() : Eigen::VectorXd(A.completeOrthogonalDecomposition().solve(b));
  out.intercept = y_mean - x_mean.dot(out.weights);
  return out;
}

std::vector<density::GaussianLayerStats> fit_background(const store::EmbeddingStore& background,
                                                        double ridge_base) {
  return density::fit_all_layers(background, density::all_tokens(background), ridge_base);
}

Eigen::VectorXd density_features(const UqModel& model, const store::HiddenStates& hidden,
                                 features::TokenSpan span) {
  static const std::vector<density::GaussianLayerStats> kNone;
  const auto& bg = model.bg_stats ? *model.bg_stats : kNone;
  return features::span_features(hidden, span, model.layer_stats, bg, model.variant);
}

double predict(const UqModel& model, const Eigen::VectorXd& layer_features, std::optional<double> prob) {
  const Eigen::VectorXd z = features::project(model.projector, layer_features);
  double out = model.intercept + model.weights.head(z.size()).dot(z);
  if (model.use_prob_feature) {
    if (!prob) throw DataError("model needs the probability feature");
    out += model.weights(z.size()) * *prob;
  }
  return out;
}

void check_compatible(const UqModel& model, const store::EmbeddingStore& store) {
  if (store.num_layers() != model.num_layers() || store.dim() != model.dim()) {
    throw DataError("dimension mismatch: model has L=" + std::to_string(model.num_layers()) + ", d=" +
                    std::to_string(model.dim()) + " but store has L=" + std::to_string(store.num_layers()) +
                    ", d=" + std::to_string(store.dim()));
  }
}

std::vector<ScoreRow> score_response(const UqModel& model, const store::EmbeddingStore& store,
                                     const store::ManifestEntry& entry) {
  const store::HiddenStates hidden = store.hidden(entry.id);
  if (hidden.layers() != model.num_layers() || hidden.dim() != model.dim()) {
    throw DataError("dimension mismatch between model and response '" + entry.id + "'");
  }

  auto score_span = [&](std::optional<std::size_t> claim_index, features::TokenSpan span) {
    ScoreRow row;
    row.id = entry.id;
    row.claim_index = claim_index;
    std::optional<double> prob;
    if (model.use_prob_feature) {
      prob = features::sequence_probability(span_logprobs(store, entry.id, span), model.meta.prob_mode);
    }
    row.density_score = predict(model, density_features(model, hidden, span), prob);
    row.score = row.density_score;
    if (model.huq) {
      row.base_score = base_uncertainty(model.meta.huq_external_score, store, entry, claim_index, span);
      row.score = hybrid::huq_score(*model.huq, *row.base_score, row.density_score);
    }
    return row;
  };

  std::vector<ScoreRow> rows;
  if (model.level == Level::Sequence) {
    rows.push_back(score_span(std::nullopt, {0, hidden.tokens()}));
  } else {
    for (std::size_t c = 0; c < entry.claims.size(); ++c) {
      rows.push_back(score_span(c, {entry.claims[c].span_start, entry.claims[c].span_end}));
    }
  }
  return rows;
}

std::vector<ScoreRow> score_responses(const UqModel& model, const store::EmbeddingStore& store,
                                      const store::Manifest& manifest, std::span<const std::string> ids) {
  check_compatible(model, store);
  std::vector<std::vector<ScoreRow>> per(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) { per[i] = score_response(model, store, manifest.at(ids[i])); });
  std::vector<ScoreRow> rows;
  for (auto& p : per) {
    for (auto& r : p) rows.push_back(std::move(r));
  }
  return rows;
}

FitResult fit_supervised(const store::EmbeddingStore& store, const store::Manifest& manifest,
                         const store::EmbeddingStore* background, const FitConfig& config) {
  if (config.variant == features::Variant::RMD && background == nullptr) {
    throw DataError("the RMD variant needs a background store");
  }
  if (background != nullptr) check_shape(store, *background, "background store");

  std::vector<std::string> train = manifest.train_ids();
  if (config.train_size) {
    if (*config.train_size > train.size()) {
      throw DataError("train_size " + std::to_string(*config.train_size) + " exceeds the " +
                      std::to_string(train.size()) + " training responses");
    }
    train = shuffled(std::move(train), config.seed ^ kSubsampleSalt);
    train.resize(*config.train_size);
    std::sort(train.begin(), train.end());
  }

  FitResult result;
  UqModel& model = result.model;
  model.variant = config.variant;
  model.use_prob_feature = config.use_prob_feature;
  model.level = config.level;

  // (1) split
  const Split split = split_train(train, config.split_ratio, config.seed);
  result.first_ids = split.first;
  result.second_ids = split.second;

  // (2) statistics on the first part
  model.layer_stats = density::fit_all_layers(store, selection_for(manifest, split.first, config, false),
                                              config.ridge_base);
  result.first_ridges = ridges(model.layer_stats);
  if (config.variant == features::Variant::RMD) model.bg_stats = fit_background(*background, config.ridge_base);

  // (3) features and targets on the second part
  const std::vector<Unit> units = training_units(manifest, split.second, config);
  const auto n = static_cast<Eigen::Index>(units.size());
  const auto layers = static_cast<Eigen::Index>(model.num_layers());
  Eigen::MatrixXd F(n, layers);
  Eigen::VectorXd y(n);
  std::vector<double> probs(units.size(), 0.0);
  std::vector<double> base(units.size(), 0.0);
  parallel_for(units.size(), [&](std::size_t i) {
    const Unit& u = units[i];
    F.row(static_cast<Eigen::Index>(i)) = density_features(model, store.hidden(u.id), u.span).transpose();
    if (config.use_prob_feature) {
      probs[i] = features::sequence_probability(span_logprobs(store, u.id, u.span), config.prob_mode);
    }
    if (config.huq) {
      base[i] = base_uncertainty(config.huq_external_score, store, manifest.at(u.id), u.claim_index, u.span);
    }
  });
  for (Eigen::Index i = 0; i < n; ++i) y(i) = units[static_cast<std::size_t>(i)].target;

  // (4) projector and regression
  model.projector = features::fit_projector(F, config.n_components);
  const auto n_comp = static_cast<Eigen::Index>(model.projector.n_components());
  const Eigen::Index k = n_comp + (config.use_prob_feature ? 1 : 0);
  Eigen::MatrixXd X(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    X.row(i).head(n_comp) = features::project(model.projector, F.row(i).transpose()).transpose();
    if (config.use_prob_feature) X(i, n_comp) = probs[static_cast<std::size_t>(i)];
  }

  ModelMetadata& meta = model.meta;
  const bool constant = (y.array() == y(0)).all();
  if (constant) {
    meta.degenerate = true;
    meta.warnings.push_back("constant regression targets: zero-weight model");
    model.weights = Eigen::VectorXd::Zero(k);
    model.intercept = y.mean();
    if (config.use_prob_feature) {
      model.weights(n_comp) = -1.0;
      model.intercept = 1.0;
    }
  } else {
    const OlsResult ols = ols_fit(X, y, config.ols_ridge);
    model.weights = ols.weights;
    model.intercept = ols.intercept;
  }

  result.second_targets.assign(y.data(), y.data() + n);
  result.second_predictions.resize(units.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    result.second_predictions[static_cast<std::size_t>(i)] = model.intercept + X.row(i).dot(model.weights);
  }

  if (config.huq) {
    std::vector<double> quality(units.size());
    for (std::size_t i = 0; i < units.size(); ++i) quality[i] = units[i].quality;
    model.huq = hybrid::tune_huq(base, result.second_predictions, quality);
    if (model.huq->degenerate) meta.warnings.push_back("constant HUQ tuning quality: alpha fixed to 1");
  }

  // (5) re-estimate statistics on the whole training set
  if (config.refit_stats) {
    model.layer_stats = density::fit_all_layers(store, selection_for(manifest, train, config, config.refit_unfiltered),
                                                config.ridge_base);
  }
  result.final_ridges = ridges(model.layer_stats);

  meta.quality_metric = config.quality_metric;
  meta.tau = config.tau;
  meta.seed = config.seed;
  meta.split_ratio = config.split_ratio;
  meta.ridge_base = config.ridge_base;
  meta.ols_ridge = config.ols_ridge;
  meta.n_components = config.n_components;
  meta.prob_mode = config.prob_mode;
  meta.raw_selection = config.raw_selection;
  meta.refit_stats = config.refit_stats;
  meta.refit_unfiltered = config.refit_unfiltered;
  meta.huq_external_score = config.huq_external_score;
  meta.train_size = config.train_size;
  meta.first_size = split.first.size();
  meta.second_size = split.second.size();
  return result;
}

}  // namespace tmd::regress
