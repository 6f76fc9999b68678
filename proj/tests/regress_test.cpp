// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <random>
#include <set>

#include "tmd/error.hpp"
#include "tmd/features.hpp"
#include "tmd/model_io.hpp"
#include "tmd/regress.hpp"
#include "tmd/synthetic.hpp"

namespace {

using namespace tmd;

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("r" + std::to_string(100 + i));
  return ids;
}

TEST(Split, SizesAndDisjointness) {
  const auto s = regress::split_train(make_ids(10), 0.5, 3);
  EXPECT_EQ(s.first.size(), 5u);
  EXPECT_EQ(s.second.size(), 5u);
  std::set<std::string> all(s.first.begin(), s.first.end());
  all.insert(s.second.begin(), s.second.end());
  EXPECT_EQ(all.size(), 10u);

  EXPECT_EQ(regress::split_train(make_ids(7), 0.5, 0).first.size(), 4u);
  EXPECT_EQ(regress::split_train(make_ids(10), 0.3, 0).first.size(), 3u);
}

TEST(Split, DeterministicAndOrderIndependent) {
  auto ids = make_ids(30);
  const auto a = regress::split_train(ids, 0.5, 42);
  std::reverse(ids.begin(), ids.end());
  const auto b = regress::split_train(ids, 0.5, 42);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_NE(regress::split_train(ids, 0.5, 43).first, a.first);
}

TEST(Split, Errors) {
  EXPECT_THROW(regress::split_train(make_ids(3), 0.5, 0), DataError);
  EXPECT_THROW(regress::split_train(make_ids(10), 0.0, 0), DataError);
  EXPECT_THROW(regress::split_train(make_ids(10), 1.0, 0), DataError);
  try {
    regress::split_train(make_ids(4), 0.99, 0);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("empty second split"), std::string::npos);
  }
}

TEST(Ols, RecoversLine) {
  Eigen::MatrixXd x(5, 1);
  x << 0, 1, 2, 3, 4;
  const Eigen::VectorXd y = 2.0 * x.col(0) + Eigen::VectorXd::Constant(5, 1.0);
  const auto r = regress::ols_fit(x, y, 0.0);
  EXPECT_NEAR(r.weights(0), 2.0, 1e-12);
  EXPECT_NEAR(r.intercept, 1.0, 1e-12);
}

TEST(Ols, ConstantTargetGivesZeroWeights) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(20, 3);
  for (auto& v : x.reshaped()) v = normal(rng);
  const auto r = regress::ols_fit(x, Eigen::VectorXd::Constant(20, -0.7), 1e-8);
  EXPECT_LE(r.weights.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(r.intercept, -0.7, 1e-12);
}

TEST(Ols, RecoversPlantedWeights) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(200, 10);
  for (auto& v : x.reshaped()) v = normal(rng);
  Eigen::VectorXd w(10);
  for (auto& v : w) v = normal(rng);
  const Eigen::VectorXd y = x * w + Eigen::VectorXd::Constant(200, 0.5);
  const auto r = regress::ols_fit(x, y, 0.0);
  EXPECT_LE((r.weights - w).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(r.intercept, 0.5, 1e-6);
}

TEST(Ols, RankDeficientDesignStaysFinite) {
  Eigen::MatrixXd x(6, 2);
  x << 1, 2, 2, 4, 3, 6, 4, 8, 5, 10, 6, 12;
  const auto r = regress::ols_fit(x, Eigen::VectorXd::LinSpaced(6, 0, 1), 0.0);
  EXPECT_TRUE(r.weights.allFinite());
  EXPECT_THROW(regress::ols_fit(x, Eigen::VectorXd::Zero(5), 0.0), DataError);
}

struct Data {
  store::EmbeddingStore store;
  store::Manifest manifest;
  store::EmbeddingStore background;
};

Data small_data(bool claims = false) {
  synth::CorpusConfig cfg;
  cfg.n_train = 80;
  cfg.n_test = 20;
  cfg.layers = 3;
  cfg.dim = 4;
  cfg.shift_layer = 2;
  const auto c = claims ? synth::make_claim_corpus(cfg) : synth::make_corpus(cfg);
  const auto bg = synth::make_background(60, 3, 4, 9);
  return {store::parse_store(store::write_store(c.records)), c.manifest,
          store::parse_store(store::write_store(bg.records))};
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<Eigen::Index>(a.size());
  const Eigen::Map<const Eigen::VectorXd> x(a.data(), n), y(b.data(), n);
  const Eigen::VectorXd xc = x.array() - x.mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  return xc.dot(yc) / (xc.norm() * yc.norm());
}

TEST(Fit, SequenceLevelModelShape) {
  const Data d = small_data();
  regress::FitConfig cfg;
  cfg.n_components = 2;
  const auto r = regress::fit_supervised(d.store, d.manifest, nullptr, cfg);
  EXPECT_EQ(r.model.num_layers(), 3u);
  EXPECT_EQ(r.model.dim(), 4u);
  EXPECT_EQ(r.model.projector.n_components(), 2u);
  EXPECT_EQ(r.model.weights.size(), 2);
  EXPECT_EQ(r.first_ids.size() + r.second_ids.size(), 80u);
  EXPECT_EQ(r.model.meta.first_size, r.first_ids.size());
  EXPECT_GT(pearson(r.second_predictions, r.second_targets), 0.5);
}

TEST(Fit, ScoringReproducesFitTimePredictions) {
  const Data d = small_data();
  regress::FitConfig cfg;
  cfg.refit_stats = false;
  cfg.use_prob_feature = true;
  const auto r = regress::fit_supervised(d.store, d.manifest, nullptr, cfg);
  const auto rows = regress::score_responses(r.model, d.store, d.manifest, r.second_ids);
  ASSERT_EQ(rows.size(), r.second_ids.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].id, r.second_ids[i]);
    EXPECT_NEAR(rows[i].score, r.second_predictions[i], 1e-8);
  }
}

TEST(Fit, ConstantQualityFallsBackToMsp) {
  Data d = small_data();
  auto entries = d.manifest.responses();
  for (auto& e : entries) e.quality["alignscore"] = 1.0;
  d.manifest = store::Manifest(entries);
  regress::FitConfig cfg;
  cfg.use_prob_feature = true;
  const auto r = regress::fit_supervised(d.store, d.manifest, nullptr, cfg);
  EXPECT_TRUE(r.model.meta.degenerate);
  ASSERT_FALSE(r.model.meta.warnings.empty());
  EXPECT_NE(r.model.meta.warnings[0].find("constant regression targets"), std::string::npos);
  const auto ids = d.manifest.test_ids();
  const auto rows = regress::score_responses(r.model, d.store, d.manifest, ids);
  for (const auto& row : rows) {
    EXPECT_NEAR(row.score, features::msp_uncertainty(d.store.logprob(row.id)), 1e-12);
  }
}

TEST(Fit, RmdRequiresBackground) {
  const Data d = small_data();
  regress::FitConfig cfg;
  cfg.variant = features::Variant::RMD;
  EXPECT_THROW(regress::fit_supervised(d.store, d.manifest, nullptr, cfg), DataError);
  const auto r = regress::fit_supervised(d.store, d.manifest, &d.background, cfg);
  ASSERT_TRUE(r.model.bg_stats.has_value());
  EXPECT_EQ(r.model.bg_stats->size(), 3u);
}

TEST(Fit, RmdWithIdenticalStatsIsConstant) {
  const Data d = small_data();
  regress::FitConfig cfg;
  cfg.variant = features::Variant::RMD;
  auto model = regress::fit_supervised(d.store, d.manifest, &d.background, cfg).model;
  model.bg_stats = model.layer_stats;
  const auto ids = d.manifest.test_ids();
  const auto rows = regress::score_responses(model, d.store, d.manifest, ids);
  const double want = regress::predict(model, Eigen::VectorXd::Zero(3), std::nullopt);
  for (const auto& row : rows) EXPECT_EQ(row.score, want);
}

TEST(Fit, ShapeMismatchRejected) {
  const Data d = small_data();
  const auto model = regress::fit_supervised(d.store, d.manifest, nullptr, {}).model;
  try {
    regress::check_compatible(model, d.background);
  } catch (...) {
    FAIL() << "matching shapes rejected";
  }
  const auto other = synth::make_background(10, 3, 5, 1);
  const auto wide = store::parse_store(store::write_store(other.records));
  try {
    regress::check_compatible(model, wide);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("dimension mismatch"), std::string::npos);
  }
}

TEST(Fit, ThreadCountDoesNotChangeModel) {
  const Data d = small_data();
  regress::FitConfig cfg;
  cfg.huq = true;
  setenv("TMD_THREADS", "1", 1);
  const std::string one = model_io::encode_model(regress::fit_supervised(d.store, d.manifest, nullptr, cfg).model);
  setenv("TMD_THREADS", "4", 1);
  const std::string four = model_io::encode_model(regress::fit_supervised(d.store, d.manifest, nullptr, cfg).model);
  unsetenv("TMD_THREADS");
  EXPECT_EQ(one, four);
}

TEST(Fit, HuqScoresAreRanks) {
  const Data d = small_data();
  regress::FitConfig cfg;
  cfg.huq = true;
  const auto r = regress::fit_supervised(d.store, d.manifest, nullptr, cfg);
  ASSERT_TRUE(r.model.huq.has_value());
  const auto ids = d.manifest.test_ids();
  for (const auto& row : regress::score_responses(r.model, d.store, d.manifest, ids)) {
    ASSERT_TRUE(row.base_score.has_value());
    EXPECT_GE(row.score, 0.0);
    EXPECT_LE(row.score, 1.0);
  }
}

TEST(Fit, ClaimLevel) {
  const Data d = small_data(true);
  regress::FitConfig cfg;
  cfg.level = regress::Level::Claim;
  cfg.n_components = 3;
  cfg.huq = true;
  cfg.huq_external_score = "ccp";
  const auto r = regress::fit_supervised(d.store, d.manifest, nullptr, cfg);
  EXPECT_GT(pearson(r.second_predictions, r.second_targets), 0.5);
  const auto& entry = d.manifest.at(d.manifest.test_ids().front());
  const auto rows = regress::score_response(r.model, d.store, entry);
  ASSERT_EQ(rows.size(), entry.claims.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ASSERT_TRUE(rows[i].claim_index.has_value());
    EXPECT_EQ(*rows[i].claim_index, i);
    EXPECT_EQ(*rows[i].base_score, entry.claims[i].external_scores.at("ccp"));
  }
}

TEST(ModelIo, RoundTrip) {
  const Data d = small_data();
  regress::FitConfig cfg;
  cfg.variant = features::Variant::RMD;
  cfg.use_prob_feature = true;
  cfg.huq = true;
  auto model = regress::fit_supervised(d.store, d.manifest, &d.background, cfg).model;
  model.meta.config_checksum = "0123456789abcdef";
  const std::string bytes = model_io::encode_model(model);
  const auto back = model_io::decode_model(bytes);
  EXPECT_EQ(model_io::encode_model(back), bytes);
  EXPECT_EQ(back.weights, model.weights);
  EXPECT_EQ(back.layer_stats[1].chol, model.layer_stats[1].chol);
  EXPECT_EQ(back.huq->delta_min, model.huq->delta_min);
  EXPECT_EQ(back.meta.config_checksum, "0123456789abcdef");

  const auto ids = d.manifest.test_ids();
  const auto a = regress::score_responses(model, d.store, d.manifest, ids);
  const auto b = regress::score_responses(back, d.store, d.manifest, ids);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].score, b[i].score);
}

TEST(ModelIo, RejectsInconsistentFiles) {
  const Data d = small_data();
  regress::FitConfig cfg;
  cfg.variant = features::Variant::RMD;
  auto model = regress::fit_supervised(d.store, d.manifest, &d.background, cfg).model;
  model.bg_stats.reset();
  EXPECT_THROW(model_io::decode_model(model_io::encode_model(model)), DataError);
  EXPECT_THROW(model_io::decode_model("TMD1garbage"), DataError);
  EXPECT_THROW(model_io::load_model("/nonexistent/model.tmd"), IoError);
}

}  // namespace
