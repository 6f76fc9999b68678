// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include "tmd/embedstore.hpp"
#include "tmd/error.hpp"
#include "tmd/metrics.hpp"

namespace {

using namespace tmd;

// Longest common subsequence by full-table recursion.
std::size_t lcs_oracle(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
    }
  }
  return t[a.size()][b.size()];
}

TEST(RougeL, Examples) {
  EXPECT_DOUBLE_EQ(metrics::rouge_l("The cat sat", "the cat sat"), 1.0);
  EXPECT_DOUBLE_EQ(metrics::rouge_l("a b c", "a c"), 0.8);
  EXPECT_DOUBLE_EQ(metrics::rouge_l("x y", "p q"), 0.0);
  EXPECT_DOUBLE_EQ(metrics::rouge_l("", "p q"), 0.0);
  EXPECT_DOUBLE_EQ(metrics::rouge_l("a, b!", "b a"), 0.5);
}

TEST(RougeL, MatchesOracleAndIsSymmetric) {
  std::mt19937_64 rng(11);
  const std::vector<std::string> vocab{"a", "b", "c", "d"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> h(1 + rng() % 8), r(1 + rng() % 8);
    for (auto& w : h) w = vocab[rng() % vocab.size()];
    for (auto& w : r) w = vocab[rng() % vocab.size()];
    const double l = static_cast<double>(lcs_oracle(h, r));
    const double want = l == 0 ? 0.0 : 2.0 * (l / h.size()) * (l / r.size()) / (l / h.size() + l / r.size());
    EXPECT_DOUBLE_EQ(metrics::rouge_l(h, r), want);
    EXPECT_DOUBLE_EQ(metrics::rouge_l(h, r), metrics::rouge_l(r, h));
  }
}

TEST(Tokenize, LowercasesAndSplits) {
  EXPECT_EQ(metrics::tokenize("Hello,  World-42!"), (std::vector<std::string>{"hello", "world", "42"}));
}

TEST(ExactMatch, Normalization) {
  EXPECT_EQ(metrics::exact_match("Paris ", "paris"), 1);
  EXPECT_EQ(metrics::exact_match("Paris", "Paris, France"), 0);
  EXPECT_EQ(metrics::exact_match("", ""), 1);
  EXPECT_EQ(metrics::exact_match("The Paris.", "paris"), 0);
  EXPECT_EQ(metrics::exact_match("The Paris.", "paris", {.strip_articles_and_punctuation = true}), 1);
}

// PRR by explicit removal: reject the most uncertain instance one at a time.
double prr_oracle(const std::vector<double>& u, const std::vector<double>& q) {
  const std::size_t n = u.size();
  auto curve_area = [&](std::vector<std::size_t> remaining) {
    double area = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      double s = 0.0;
      for (std::size_t i : remaining) s += q[i];
      area += s / static_cast<double>(remaining.size());
      remaining.erase(remaining.begin());
    }
    return area / static_cast<double>(n);
  };
  std::vector<std::size_t> by_u(n), by_q(n);
  std::iota(by_u.begin(), by_u.end(), 0);
  std::iota(by_q.begin(), by_q.end(), 0);
  std::stable_sort(by_u.begin(), by_u.end(), [&](std::size_t a, std::size_t b) { return u[a] > u[b]; });
  std::stable_sort(by_q.begin(), by_q.end(), [&](std::size_t a, std::size_t b) { return q[a] < q[b]; });
  const double rnd = std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(n);
  const double orc = curve_area(by_q);
  if (orc == rnd) return 0.0;
  return (curve_area(by_u) - rnd) / (orc - rnd);
}

TEST(Prr, PerfectAndConstant) {
  const std::vector<double> q{0.1, 0.9, 0.4, 0.7};
  const std::vector<double> u{0.9, 0.1, 0.6, 0.3};
  EXPECT_NEAR(metrics::prr(u, q), 1.0, 1e-12);
  EXPECT_EQ(metrics::prr(u, std::vector<double>{0.5, 0.5, 0.5, 0.5}), 0.0);
  EXPECT_THROW(metrics::prr(std::vector<double>{1.0}, std::vector<double>{1.0}), DataError);
  EXPECT_THROW(metrics::prr(u, std::vector<double>{1.0, 2.0}), DataError);
}

TEST(Prr, CoRankingOnSymmetricQualitiesIsMinusOne) {
  // Evenly spaced qualities make the worst curve the mirror of the best.
  const std::vector<double> q{0.0, 0.25, 0.5, 0.75, 1.0};
  EXPECT_NEAR(metrics::prr(q, q), -1.0, 1e-12);
}

TEST(Prr, CoRankingOnAsymmetricQualities) {
  // Hand computation: oracle area 23/36, worst area 5/36, random 11/30.
  const std::vector<double> q{0.0, 0.1, 1.0};
  const double rnd = 11.0 / 30.0;
  const double want = (5.0 / 36.0 - rnd) / (23.0 / 36.0 - rnd);
  EXPECT_NEAR(want, -41.0 / 49.0, 1e-15);
  EXPECT_NEAR(metrics::prr(q, q), want, 1e-12);
  EXPECT_NEAR(prr_oracle(q, q), want, 1e-12);
}

TEST(Prr, MatchesRemovalOracleOnAllPermutations) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif;
  for (std::size_t n = 2; n <= 6; ++n) {
    std::vector<double> q(n);
    for (auto& v : q) v = unif(rng);
    std::vector<double> u(n);
    std::iota(u.begin(), u.end(), 0.0);
    do {
      EXPECT_NEAR(metrics::prr(u, q), prr_oracle(u, q), 1e-12);
    } while (std::next_permutation(u.begin(), u.end()));
  }
}

TEST(Prr, TiesKeepInputOrder) {
  const std::vector<double> q{1.0, 0.0, 0.5};
  const std::vector<double> tied{0.5, 0.5, 0.5};
  EXPECT_NEAR(metrics::prr(tied, q), prr_oracle(tied, q), 1e-12);
  // All tied: rejection follows input order.
  const auto means = metrics::rejection_means(tied, q);
  EXPECT_DOUBLE_EQ(means[1], 0.25);
}

TEST(Prr, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unif;
  std::vector<double> u(30), q(30), v(30);
  for (auto& x : u) x = unif(rng);
  for (auto& x : q) x = unif(rng);
  for (std::size_t i = 0; i < 30; ++i) v[i] = std::exp(3.0 * u[i]) - 7.0;
  EXPECT_EQ(metrics::prr(u, q), metrics::prr(v, q));
}

double roc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

TEST(RocAuc, Examples) {
  EXPECT_EQ(metrics::roc_auc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), 1.0);
  EXPECT_EQ(metrics::roc_auc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<int>{1, 0, 1}), 0.5);
  EXPECT_THROW(metrics::roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), DataError);
  EXPECT_THROW(metrics::roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 2}), DataError);
}

TEST(RocAuc, MatchesPairwiseOracleExactly) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 40;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = trial % 2 == 0 ? static_cast<double>(rng() % 5) : static_cast<double>(rng() % 100000) / 7.0;
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_EQ(metrics::roc_auc(s, y), roc_oracle(s, y));
    std::vector<double> neg(n);
    for (std::size_t i = 0; i < n; ++i) neg[i] = -s[i];
    // Complement identity; ties contribute half to both sides.
    EXPECT_NEAR(metrics::roc_auc(s, y) + metrics::roc_auc(neg, y), 1.0, 1e-15);
  }
}

TEST(PrAuc, HandEnumeratedCurves) {
  EXPECT_DOUBLE_EQ(metrics::pr_auc(std::vector<double>{0.9, 0.8, 0.2}, std::vector<int>{1, 1, 0}), 1.0);
  // One positive ranked last among four: recall jumps at precision 1/4.
  EXPECT_DOUBLE_EQ(metrics::pr_auc(std::vector<double>{0.9, 0.8, 0.7, 0.1}, std::vector<int>{0, 0, 0, 1}), 0.25);
  // All tied: prevalence.
  EXPECT_DOUBLE_EQ(metrics::pr_auc(std::vector<double>{1, 1, 1, 1, 1}, std::vector<int>{1, 0, 1, 0, 0}), 0.4);
  // Ranks: + - + -: 0.5 * 1 + 0.5 * 2/3.
  EXPECT_DOUBLE_EQ(metrics::pr_auc(std::vector<double>{4, 3, 2, 1}, std::vector<int>{1, 0, 1, 0}),
                   0.5 + 0.5 * 2.0 / 3.0);
  // Tie group {+, -} first then +: 0.5 * 1/2 + 0.5 * 2/3.
  EXPECT_DOUBLE_EQ(metrics::pr_auc(std::vector<double>{5, 5, 1}, std::vector<int>{1, 0, 1}), 0.25 + 1.0 / 3.0);
  EXPECT_THROW(metrics::pr_auc(std::vector<double>{1, 2}, std::vector<int>{0, 0}), DataError);
}

TEST(RejectionTable, SharesPrrCurve) {
  const std::vector<double> q{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  const std::vector<double> u{9, 8, 7, 6, 5, 4, 3, 2, 1, 0};
  const auto grid = metrics::default_rejection_grid();
  ASSERT_EQ(grid.size(), 20u);
  const auto rows = metrics::rejection_table(u, q, grid);
  EXPECT_DOUBLE_EQ(rows[0].mean_quality, 0.5);
  EXPECT_DOUBLE_EQ(rows[10].fraction, 0.5);
  EXPECT_DOUBLE_EQ(rows[10].mean_quality, 1.0);
  const auto means = metrics::rejection_means(u, q);
  for (const auto& r : rows) {
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(std::llround(r.fraction * 10)), 9);
    EXPECT_EQ(r.mean_quality, means[k]);
  }
  EXPECT_THROW(metrics::rejection_table(u, q, std::vector<double>{0.5, 0.2}), DataError);
  EXPECT_THROW(metrics::rejection_table(u, q, std::vector<double>{1.0}), DataError);
}

TEST(Report, JsonRoundTripAndCsv) {
  metrics::EvalReport r;
  r.prr = {{"rouge_l", 0.5}, {"alignscore", -0.25}};
  r.roc_auc = 0.75;
  r.rejection_curve = {{0.0, 0.5}, {0.5, 0.625}};
  r.n = 8;
  const auto back = metrics::eval_report_from_json(metrics::to_json(r));
  EXPECT_EQ(back.prr, r.prr);
  EXPECT_EQ(back.roc_auc, r.roc_auc);
  EXPECT_FALSE(back.pr_auc);
  EXPECT_EQ(back.n, 8u);

  const auto path = std::filesystem::temp_directory_path() / "tmd_metrics_test.csv";
  metrics::write_rejection_csv(path, r.rejection_curve);
  EXPECT_EQ(store::read_file(path), "fraction,mean_quality\n0,0.5\n0.5,0.625\n");
  std::filesystem::remove(path);
}

}  // namespace
