// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

// Hybrid uncertainty: rank-based case combination of a probability score (u1)
// and a density score (u2).

#pragma once

#include <span>
#include <vector>

namespace tmd::hybrid {

struct HuqParams {
  double delta_min = 0.0;  // threshold on u2; -inf sends everything to the mixed branch
  double delta_max = 0.0;  // threshold on u1
  double alpha = 1.0;      // weight of the u1 rank in the mixed branch
  std::vector<double> ref_t2_u1;   // sorted ascending
  std::vector<double> ref_t2_u2;   // sorted ascending
  std::vector<double> ref_tid_u1;  // sorted u1 of tuning points with u2 <= delta_min
  bool degenerate = false;         // set when tuning quality was constant
};

/// Fraction of `sorted_ref` that is <= u. Throws DataError on an empty reference.
double rank(double u, std::span<const double> sorted_ref);

/// Case 1: u2 <= delta_min and u1 <= delta_max -> rank(u1, T_ID)
/// Case 2: u2 <= delta_min and u1 >  delta_max -> rank(u1, T2)
/// Case 3: u2 >  delta_min -> (1 - alpha) rank(u2, T2) + alpha rank(u1, T2)
/// An empty T_ID reference falls back to the T2 reference for case 1.
double huq_score(const HuqParams& params, double u1, double u2);

/// Builds the reference arrays for a threshold/weight triple over tuning data.
HuqParams make_params(std::span<const double> u1, std::span<const double> u2, double delta_min,
                      double delta_max, double alpha);

/// Grid search over delta_min in {-inf} + deciles of u2, delta_max over deciles
/// of u1, alpha in {0, 0.05, ..., 1}, maximizing PRR against `quality`. Ties
/// prefer larger alpha, then larger delta_min, then the earlier delta_max.
/// Constant quality yields alpha = 1, delta_min = -inf and `degenerate` set.
/// Throws DataError for fewer than 4 points or length mismatch.
HuqParams tune_huq(std::span<const double> u1, std::span<const double> u2, std::span<const double> quality);

/// Linear-interpolated quantile of unsorted values, p in [0, 1].
double quantile(std::span<const double> values, double p);

}  // namespace tmd::hybrid
