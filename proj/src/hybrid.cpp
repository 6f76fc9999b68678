// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tmd/hybrid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tmd/error.hpp"
#include "tmd/metrics.hpp"
#include "tmd/parallel.hpp"

namespace tmd::hybrid {

namespace {

std::vector<double> sorted_copy(std::span<const double> values) {
  std::vector<double> out(values.begin(), values.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> deciles(std::span<const double> values) {
  std::vector<double> out;
  for (int i = 1; i <= 9; ++i) out.push_back(quantile(values, i / 10.0));
  return out;
}

}  // namespace

double rank(double u, std::span<const double> sorted_ref) {
  if (sorted_ref.empty()) throw DataError("rank against an empty reference set");
  const auto count = std::upper_bound(sorted_ref.begin(), sorted_ref.end(), u) - sorted_ref.begin();
  return static_cast<double>(count) / static_cast<double>(sorted_ref.size());
}

double huq_score(const HuqParams& params, double u1, double u2) {
  if (u2 <= params.delta_min) {
    if (u1 <= params.delta_max && !params.ref_tid_u1.empty()) return rank(u1, params.ref_tid_u1);
    return rank(u1, params.ref_t2_u1);
  }
  return (1.0 - params.alpha) * rank(u2, params.ref_t2_u2) + params.alpha * rank(u1, params.ref_t2_u1);
}

double quantile(std::span<const double> values, double p) {
  if (values.empty()) throw DataError("quantile of an empty set");
  const auto sorted = sorted_copy(values);
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

HuqParams make_params(std::span<const double> u1, std::span<const double> u2, double delta_min,
                      double delta_max, double alpha) {
  if (u1.size() != u2.size()) throw DataError("length mismatch between u1 and u2");
  HuqParams p;
  p.delta_min = delta_min;
  p.delta_max = delta_max;
  p.alpha = alpha;
  p.ref_t2_u1 = sorted_copy(u1);
  p.ref_t2_u2 = sorted_copy(u2);
  for (std::size_t i = 0; i < u1.size(); ++i) {
    if (u2[i] <= delta_min) p.ref_tid_u1.push_back(u1[i]);
  }
  std::sort(p.ref_tid_u1.begin(), p.ref_tid_u1.end());
  return p;
}

HuqParams tune_huq(std::span<const double> u1, std::span<const double> u2, std::span<const double> quality) {
  if (u1.size() != u2.size() || u1.size() != quality.size()) {
    throw DataError("length mismatch in HUQ tuning data");
  }
  if (u1.size() < 4) throw DataError("too few points for HUQ tuning: need at least 4");

  const double neg_inf = -std::numeric_limits<double>::infinity();
  const auto [qmin, qmax] = std::minmax_element(quality.begin(), quality.end());
  if (*qmin == *qmax) {
    HuqParams p = make_params(u1, u2, neg_inf, quantile(u1, 0.5), 1.0);
    p.degenerate = true;
    return p;
  }

  std::vector<double> delta_mins{neg_inf};
  for (double d : deciles(u2)) delta_mins.push_back(d);
  const std::vector<double> delta_maxs = deciles(u1);
  std::vector<double> alphas;
  for (int i = 0; i <= 20; ++i) alphas.push_back(i / 20.0);

  struct Candidate {
    double delta_min;
    double delta_max;
    double alpha;
    double prr = 0.0;
  };
  std::vector<Candidate> grid;
  grid.reserve(delta_mins.size() * delta_maxs.size() * alphas.size());
  for (double dmin : delta_mins) {
    for (double dmax : delta_maxs) {
      for (double a : alphas) grid.push_back({dmin, dmax, a});
    }
  }

  parallel_for(grid.size(), [&](std::size_t g) {
    Candidate& c = grid[g];
    const HuqParams p = make_params(u1, u2, c.delta_min, c.delta_max, c.alpha);
    std::vector<double> scores(u1.size());
    for (std::size_t i = 0; i < u1.size(); ++i) scores[i] = huq_score(p, u1[i], u2[i]);
    c.prr = metrics::prr(scores, quality);
  });

  const Candidate* best = &grid.front();
  for (const Candidate& c : grid) {
    const bool better = c.prr > best->prr ||
                        (c.prr == best->prr && (c.alpha > best->alpha ||
                                                (c.alpha == best->alpha && c.delta_min > best->delta_min)));
    if (better) best = &c;
  }
  return make_params(u1, u2, best->delta_min, best->delta_max, best->alpha);
}

}  // namespace tmd::hybrid
