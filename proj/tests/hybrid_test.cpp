// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include "tmd/error.hpp"
#include "tmd/hybrid.hpp"
#include "tmd/metrics.hpp"

namespace {

using namespace tmd;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<std::size_t> argsort(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  return idx;
}

// Orderings agree when every strict inequality in one holds in the other.
bool same_order(const std::vector<double>& a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.size(); ++j) {
      if ((a[i] < a[j]) != (b[i] < b[j])) return false;
    }
  }
  return true;
}

TEST(Rank, Counting) {
  const std::vector<double> ref{1, 2, 3};
  EXPECT_DOUBLE_EQ(hybrid::rank(2.5, ref), 2.0 / 3.0);
  EXPECT_EQ(hybrid::rank(0.5, ref), 0.0);
  EXPECT_EQ(hybrid::rank(3.0, ref), 1.0);
  EXPECT_EQ(hybrid::rank(2.0, ref), 2.0 / 3.0);
  EXPECT_THROW(hybrid::rank(1.0, std::vector<double>{}), DataError);
}

TEST(Rank, Monotone) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  std::vector<double> ref(50);
  for (auto& x : ref) x = normal(rng);
  std::sort(ref.begin(), ref.end());
  double prev = -1.0;
  for (double u = -4.0; u <= 4.0; u += 0.01) {
    const double r = hybrid::rank(u, ref);
    EXPECT_GE(r, prev);
    prev = r;
  }
}

// Direct transcription of the three branches.
double huq_oracle(double u1, double u2, double dmin, double dmax, double alpha, const std::vector<double>& t2_u1,
                  const std::vector<double>& t2_u2) {
  auto r = [](double u, const std::vector<double>& ref) {
    double c = 0;
    for (double x : ref) c += x <= u ? 1.0 : 0.0;
    return c / static_cast<double>(ref.size());
  };
  std::vector<double> tid;
  for (std::size_t i = 0; i < t2_u1.size(); ++i) {
    if (t2_u2[i] <= dmin) tid.push_back(t2_u1[i]);
  }
  if (u2 <= dmin && u1 <= dmax) return r(u1, tid);
  if (u2 <= dmin && u1 > dmax) return r(u1, t2_u1);
  return (1 - alpha) * r(u2, t2_u2) + alpha * r(u1, t2_u1);
}

TEST(HuqScore, MatchesCaseEnumerationOracle) {
  const std::vector<double> u1{0.1, 0.5, 0.3, 0.9, 0.7, 0.2};
  const std::vector<double> u2{1.0, 4.0, 2.0, 6.0, 3.0, 5.0};
  const double dmin = 3.0;
  const double dmax = 0.4;
  const double alpha = 0.35;
  const auto p = hybrid::make_params(u1, u2, dmin, dmax, alpha);
  EXPECT_EQ(p.ref_tid_u1, (std::vector<double>{0.1, 0.3, 0.7}));
  EXPECT_TRUE(std::is_sorted(p.ref_t2_u1.begin(), p.ref_t2_u1.end()));

  // One input per branch, plus boundaries.
  const std::vector<std::pair<double, double>> inputs{{0.25, 2.5}, {0.8, 1.5}, {0.6, 4.5}, {0.4, 3.0}, {0.41, 3.0},
                                                      {0.4, 3.0001}};
  for (const auto& [a, b] : inputs) {
    EXPECT_DOUBLE_EQ(hybrid::huq_score(p, a, b), huq_oracle(a, b, dmin, dmax, alpha, u1, u2)) << a << "," << b;
  }
  EXPECT_DOUBLE_EQ(hybrid::huq_score(p, 0.25, 2.5), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(hybrid::huq_score(p, 0.8, 1.5), 5.0 / 6.0);
  EXPECT_DOUBLE_EQ(hybrid::huq_score(p, 0.6, 4.5), 0.65 * 4.0 / 6.0 + 0.35 * 4.0 / 6.0);
}

TEST(HuqScore, CollapsesToSingleScore) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unif;
  std::vector<double> u1(40), u2(40);
  for (auto& x : u1) x = unif(rng);
  for (auto& x : u2) x = unif(rng);
  const auto p1 = hybrid::make_params(u1, u2, kNegInf, 0.5, 1.0);
  const auto p0 = hybrid::make_params(u1, u2, kNegInf, 0.5, 0.0);

  std::vector<double> t1(30), t2(30), s1(30), s0(30);
  for (std::size_t i = 0; i < 30; ++i) {
    t1[i] = unif(rng) * 1.4 - 0.2;
    t2[i] = unif(rng) * 1.4 - 0.2;
    s1[i] = hybrid::huq_score(p1, t1[i], t2[i]);
    s0[i] = hybrid::huq_score(p0, t1[i], t2[i]);
    EXPECT_GE(s1[i], 0.0);
    EXPECT_LE(s1[i], 1.0);
  }
  // Rank normalization can merge inputs that fall between the same references,
  // so the check is that no strict order is reversed.
  for (std::size_t i = 0; i < 30; ++i) {
    for (std::size_t j = 0; j < 30; ++j) {
      if (t1[i] < t1[j]) EXPECT_LE(s1[i], s1[j]);
      if (t2[i] < t2[j]) EXPECT_LE(s0[i], s0[j]);
    }
  }
  // On the reference points themselves the orderings coincide exactly.
  std::vector<double> r1, r0;
  for (std::size_t i = 0; i < 40; ++i) {
    r1.push_back(hybrid::huq_score(p1, u1[i], u2[i]));
    r0.push_back(hybrid::huq_score(p0, u1[i], u2[i]));
  }
  EXPECT_TRUE(same_order(r1, u1));
  EXPECT_TRUE(same_order(r0, u2));
  EXPECT_EQ(argsort(r1), argsort(u1));
}

TEST(HuqScore, EmptyIdSetFallsBackToT2) {
  const std::vector<double> u1{0.1, 0.2, 0.3, 0.4};
  const std::vector<double> u2{5, 6, 7, 8};
  const auto p = hybrid::make_params(u1, u2, 1.0, 0.5, 0.5);
  EXPECT_TRUE(p.ref_tid_u1.empty());
  EXPECT_DOUBLE_EQ(hybrid::huq_score(p, 0.25, 0.0), 0.5);
}

TEST(Tune, PerfectU1GivesPrrOne) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif;
  std::vector<double> q(60), u1(60), u2(60);
  for (std::size_t i = 0; i < 60; ++i) {
    q[i] = unif(rng);
    u1[i] = 1.0 - q[i];
    u2[i] = unif(rng);
  }
  const auto p = hybrid::tune_huq(u1, u2, q);
  std::vector<double> s(60);
  for (std::size_t i = 0; i < 60; ++i) s[i] = hybrid::huq_score(p, u1[i], u2[i]);
  EXPECT_NEAR(metrics::prr(s, q), 1.0, 1e-12);
}

TEST(Tune, NeverWorseThanEitherInput) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unif;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> q(80), u1(80), u2(80);
    for (std::size_t i = 0; i < 80; ++i) {
      q[i] = unif(rng);
      u1[i] = -q[i] + 0.8 * unif(rng);
      u2[i] = -q[i] + 0.5 * unif(rng) + (i % 7 == 0 ? 1.0 : 0.0);
    }
    const auto p = hybrid::tune_huq(u1, u2, q);
    std::vector<double> s(80);
    for (std::size_t i = 0; i < 80; ++i) s[i] = hybrid::huq_score(p, u1[i], u2[i]);
    EXPECT_GE(metrics::prr(s, q), std::max(metrics::prr(u1, q), metrics::prr(u2, q)) - 1e-12);
  }
}

TEST(Tune, EqualScoresPreferAlphaOne) {
  const std::vector<double> u{0.3, 0.1, 0.8, 0.5, 0.9, 0.2};
  const std::vector<double> q{0.6, 0.9, 0.1, 0.4, 0.2, 0.7};
  const auto p = hybrid::tune_huq(u, u, q);
  EXPECT_EQ(p.alpha, 1.0);
}

TEST(Tune, ConstantQualityIsDegenerate) {
  const std::vector<double> u{0.3, 0.1, 0.8, 0.5};
  const auto p = hybrid::tune_huq(u, u, std::vector<double>(4, 1.0));
  EXPECT_TRUE(p.degenerate);
  EXPECT_EQ(p.alpha, 1.0);
  EXPECT_EQ(p.delta_min, kNegInf);
}

TEST(Tune, Errors) {
  const std::vector<double> three{1, 2, 3};
  EXPECT_THROW(hybrid::tune_huq(three, three, three), DataError);
  const std::vector<double> four{1, 2, 3, 4};
  EXPECT_THROW(hybrid::tune_huq(four, three, four), DataError);
}

TEST(Tune, Deterministic) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif;
  std::vector<double> q(50), u1(50), u2(50);
  for (std::size_t i = 0; i < 50; ++i) {
    q[i] = unif(rng);
    u1[i] = -q[i] + unif(rng);
    u2[i] = -q[i] + unif(rng);
  }
  const auto a = hybrid::tune_huq(u1, u2, q);
  const auto b = hybrid::tune_huq(u1, u2, q);
  EXPECT_EQ(a.delta_min, b.delta_min);
  EXPECT_EQ(a.delta_max, b.delta_max);
  EXPECT_EQ(a.alpha, b.alpha);
}

TEST(Quantile, LinearInterpolation) {
  const std::vector<double> v{4, 1, 3, 2};
  EXPECT_DOUBLE_EQ(hybrid::quantile(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(hybrid::quantile(v, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(hybrid::quantile(v, 0.5), 2.5);
  EXPECT_THROW(hybrid::quantile(std::vector<double>{}, 0.5), DataError);
}

}  // namespace
