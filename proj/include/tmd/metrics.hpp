// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

// Generation-quality metrics (ROUGE-L, exact match) and uncertainty evaluation
// metrics (PRR, ROC-AUC, PR-AUC, rejection curves).

#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tmd::metrics {

/// Lowercases ASCII and splits on runs of non-alphanumeric ASCII characters.
/// Bytes >= 0x80 are kept as word characters so UTF-8 words stay intact.
std::vector<std::string> tokenize(std::string_view text);

/// LCS-based F1 between token lists; 0 when either side is empty.
double rouge_l(std::span<const std::string> hypothesis, std::span<const std::string> reference);
double rouge_l(std::string_view hypothesis, std::string_view reference);

struct ExactMatchOptions {
  /// SQuAD-style normalization: drop punctuation and the articles a/an/the.
  bool strip_articles_and_punctuation = false;
};

/// 1 iff the trimmed, ASCII-casefolded strings are equal.
int exact_match(std::string_view hypothesis, std::string_view reference, ExactMatchOptions options = {});

/// Mean quality of the n-k least uncertain instances for k = 0..n-1, after a
/// stable descending sort on uncertainty.
std::vector<double> rejection_means(std::span<const double> uncertainty, std::span<const double> quality);

/// Prediction rejection ratio: (AUC - AUC_random) / (AUC_oracle - AUC_random),
/// AUC being the mean of rejection_means. Returns 0 when quality is constant.
/// Throws DataError for n < 2 or length mismatch.
double prr(std::span<const double> uncertainty, std::span<const double> quality);

/// Mann-Whitney ROC-AUC with ties counted 1/2; labels: 1 = positive (nonfactual).
/// Throws DataError unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Average precision over distinct descending-score thresholds (ties grouped).
/// Throws DataError when there are no positives.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

struct RejectionRow {
  double fraction = 0.0;
  double mean_quality = 0.0;
};

/// Rejection-curve samples at the requested fractions (each mapped to the
/// nearest integer k). Fractions must be strictly increasing in [0, 1).
std::vector<RejectionRow> rejection_table(std::span<const double> uncertainty, std::span<const double> quality,
                                          std::span<const double> grid);

/// Default plotting grid 0, 0.05, ..., 0.95.
std::vector<double> default_rejection_grid();

struct EvalReport {
  std::map<std::string, double> prr;  // quality metric -> PRR
  std::optional<double> roc_auc;
  std::optional<double> pr_auc;
  std::vector<RejectionRow> rejection_curve;
  std::size_t n = 0;
};

nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& doc);

/// CSV with header `fraction,mean_quality`.
void write_rejection_csv(const std::filesystem::path& path, std::span<const RejectionRow> rows);

}  // namespace tmd::metrics
