// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tmd/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>

#include "tmd/embedstore.hpp"
#include "tmd/error.hpp"

namespace tmd::metrics {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

std::string_view trim(std::string_view s) {
  auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && ws(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && ws(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string casefold(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80) c = static_cast<char>(std::tolower(u));
  }
  return out;
}

std::string squad_normalize(std::string_view s) {
  std::string no_punct;
  for (char c : casefold(s)) {
    if (std::ispunct(static_cast<unsigned char>(c)) == 0) no_punct.push_back(c);
  }
  std::istringstream words(no_punct);
  std::string word;
  std::string out;
  while (words >> word) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += word;
  }
  return out;
}

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("length mismatch between uncertainty and quality");
  if (a.size() < 2) throw DataError("need at least 2 instances");
}

std::vector<double> curve_for_order(std::span<const std::size_t> order, std::span<const double> quality) {
  const std::size_t n = order.size();
  std::vector<double> means(n);
  double suffix = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    suffix += quality[order[k]];
    means[k] = suffix / static_cast<double>(n - k);
  }
  return means;
}

double mean_of(std::span<const double> values) {
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

void check_labels(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DataError("length mismatch between scores and labels");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("labels must be 0 or 1");
    if (std::isnan(scores[i])) throw DataError("NaN score");
  }
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (is_word_byte(u)) {
      cur.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : c);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double rouge_l(std::span<const std::string> hypothesis, std::span<const std::string> reference) {
  if (hypothesis.empty() || reference.empty()) return 0.0;
  std::vector<std::size_t> prev(reference.size() + 1, 0);
  std::vector<std::size_t> cur(reference.size() + 1, 0);
  for (const std::string& h : hypothesis) {
    for (std::size_t j = 1; j <= reference.size(); ++j) {
      cur[j] = h == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const auto lcs = static_cast<double>(prev.back());
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(hypothesis.size());
  const double recall = lcs / static_cast<double>(reference.size());
  return 2.0 * precision * recall / (precision + recall);
}

double rouge_l(std::string_view hypothesis, std::string_view reference) {
  const auto h = tokenize(hypothesis);
  const auto r = tokenize(reference);
  return rouge_l(std::span<const std::string>(h), std::span<const std::string>(r));
}

int exact_match(std::string_view hypothesis, std::string_view reference, ExactMatchOptions options) {
  if (options.strip_articles_and_punctuation) {
    return squad_normalize(hypothesis) == squad_normalize(reference) ? 1 : 0;
  }
  return casefold(trim(hypothesis)) == casefold(trim(reference)) ? 1 : 0;
}

std::vector<double> rejection_means(std::span<const double> uncertainty, std::span<const double> quality) {
  check_pair(uncertainty, quality);
  std::vector<std::size_t> order(uncertainty.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return uncertainty[a] > uncertainty[b]; });
  return curve_for_order(order, quality);
}

double prr(std::span<const double> uncertainty, std::span<const double> quality) {
  check_pair(uncertainty, quality);
  const auto [lo, hi] = std::minmax_element(quality.begin(), quality.end());
  if (*lo == *hi) return 0.0;

  const auto curve = rejection_means(uncertainty, quality);
  std::vector<std::size_t> oracle(quality.size());
  std::iota(oracle.begin(), oracle.end(), std::size_t{0});
  std::stable_sort(oracle.begin(), oracle.end(), [&](std::size_t a, std::size_t b) { return quality[a] < quality[b]; });
  const auto oracle_curve = curve_for_order(oracle, quality);

  const double auc = mean_of(curve);
  const double auc_oracle = mean_of(oracle_curve);
  const double auc_random = mean_of(quality);
  const double denom = auc_oracle - auc_random;
  if (denom == 0.0) return 0.0;
  return (auc - auc_random) / denom;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_labels(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
  std::uint64_t twice_wins = 0;  // 2 * (#pos > neg) + (#pos == neg)
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0;
    std::uint64_t neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? pos : neg) += 1;
      ++j;
    }
    twice_wins += pos * (2 * negatives + neg);
    positives += pos;
    negatives += neg;
    i = j;
  }
  if (positives == 0 || negatives == 0) throw DataError("ROC-AUC needs both classes");
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  check_labels(scores, labels);
  const auto total_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0.0) throw DataError("PR-AUC needs at least one positive");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double tp = 0.0;
  double fp = 0.0;
  double prev_recall = 0.0;
  double area = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / total_pos;
    area += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return area;
}

std::vector<RejectionRow> rejection_table(std::span<const double> uncertainty, std::span<const double> quality,
                                          std::span<const double> grid) {
  const auto means = rejection_means(uncertainty, quality);
  const std::size_t n = means.size();
  std::vector<RejectionRow> rows;
  rows.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double f = grid[i];
    if (!(f >= 0.0 && f < 1.0)) throw DataError("rejection fractions must lie in [0, 1)");
    if (i > 0 && !(f > grid[i - 1])) throw DataError("rejection fractions must be strictly increasing");
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(std::llround(f * static_cast<double>(n))), n - 1);
    rows.push_back({f, means[k]});
  }
  return rows;
}

std::vector<double> default_rejection_grid() {
  std::vector<double> grid;
  for (int i = 0; i < 20; ++i) grid.push_back(i / 20.0);
  return grid;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& row : report.rejection_curve) {
    curve.push_back({{"fraction", row.fraction}, {"mean_quality", row.mean_quality}});
  }
  nlohmann::json out = {{"prr", report.prr}, {"rejection_curve", std::move(curve)}, {"n", report.n}};
  if (report.roc_auc) out["roc_auc"] = *report.roc_auc;
  if (report.pr_auc) out["pr_auc"] = *report.pr_auc;
  return out;
}

EvalReport eval_report_from_json(const nlohmann::json& doc) {
  EvalReport r;
  r.prr = doc.at("prr").get<std::map<std::string, double>>();
  if (doc.contains("roc_auc")) r.roc_auc = doc.at("roc_auc").get<double>();
  if (doc.contains("pr_auc")) r.pr_auc = doc.at("pr_auc").get<double>();
  for (const auto& row : doc.at("rejection_curve")) {
    r.rejection_curve.push_back({row.at("fraction").get<double>(), row.at("mean_quality").get<double>()});
  }
  r.n = doc.at("n").get<std::size_t>();
  return r;
}

void write_rejection_csv(const std::filesystem::path& path, std::span<const RejectionRow> rows) {
  std::string out = "fraction,mean_quality\n";
  char buf[32];
  for (const auto& row : rows) {
    out += std::string(buf, std::to_chars(buf, buf + sizeof(buf), row.fraction).ptr) + ",";
    out += std::string(buf, std::to_chars(buf, buf + sizeof(buf), row.mean_quality).ptr) + "\n";
  }
  store::write_file(path, out);
}

}  // namespace tmd::metrics
