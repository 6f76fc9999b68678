// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tmd/embedstore.hpp"

namespace tmd::store {

enum class ClaimLabel { Factual, Nonfactual };
enum class Split { Train, Test };

/// Token span [span_start, span_end) of one claim inside a response.
struct Claim {
  std::size_t span_start = 0;
  std::size_t span_end = 0;
  std::optional<ClaimLabel> label;
  std::map<std::string, double, std::less<>> external_scores;
};

struct ManifestEntry {
  std::string id;
  std::string prompt_text;
  std::string output_text;
  std::size_t token_count = 0;
  std::map<std::string, double, std::less<>> quality;
  std::map<std::string, double, std::less<>> external_scores;
  std::vector<Claim> claims;
  std::optional<Split> split;

  /// Responses without a split tag count as training data.
  bool is_train() const { return !split || *split == Split::Train; }
  bool is_test() const { return split && *split == Split::Test; }

  /// Throws DataError when the metric is absent.
  double quality_of(std::string_view metric) const;
};

class Manifest {
 public:
  Manifest() = default;
  /// Throws DataError on duplicate ids.
  explicit Manifest(std::vector<ManifestEntry> responses);

  const std::vector<ManifestEntry>& responses() const { return responses_; }
  const ManifestEntry* find(std::string_view id) const;
  /// Throws DataError when the id is unknown.
  const ManifestEntry& at(std::string_view id) const;

  std::vector<std::string> train_ids() const;
  std::vector<std::string> test_ids() const;

 private:
  std::vector<ManifestEntry> responses_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
};

/// Unknown fields are ignored. Throws DataError on schema violations.
Manifest parse_manifest(const nlohmann::json& doc);
Manifest load_manifest(const std::filesystem::path& path);
nlohmann::json to_json(const Manifest& manifest);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct ValidationIssue {
  std::string response_id;
  std::string kind;  // "missing hidden tensor", "token count mismatch", ...
  std::string detail;
};

/// Cross-checks a store against a manifest. Problems are collected, never thrown.
std::vector<ValidationIssue> validate(const EmbeddingStore& store, const Manifest& manifest);

}  // namespace tmd::store
