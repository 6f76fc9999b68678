// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tmd/manifest.hpp"

#include <algorithm>
#include <cmath>

#include "tmd/error.hpp"

namespace tmd::store {

using nlohmann::json;

double ManifestEntry::quality_of(std::string_view metric) const {
  auto it = quality.find(metric);
  if (it == quality.end()) {
    throw DataError("response '" + id + "' has no quality metric '" + std::string(metric) + "'");
  }
  return it->second;
}

Manifest::Manifest(std::vector<ManifestEntry> responses) : responses_(std::move(responses)) {
  for (std::size_t i = 0; i < responses_.size(); ++i) {
    if (!by_id_.emplace(responses_[i].id, i).second) {
      throw DataError("duplicate response id '" + responses_[i].id + "' in manifest");
    }
  }
}

const ManifestEntry* Manifest::find(std::string_view id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &responses_[it->second];
}

const ManifestEntry& Manifest::at(std::string_view id) const {
  const ManifestEntry* e = find(id);
  if (e == nullptr) throw DataError("unknown response id '" + std::string(id) + "'");
  return *e;
}

std::vector<std::string> Manifest::train_ids() const {
  std::vector<std::string> out;
  for (const auto& e : responses_) {
    if (e.is_train()) out.push_back(e.id);
  }
  return out;
}

std::vector<std::string> Manifest::test_ids() const {
  std::vector<std::string> out;
  for (const auto& e : responses_) {
    if (e.is_test()) out.push_back(e.id);
  }
  return out;
}

namespace {

std::map<std::string, double, std::less<>> read_scores(const json& obj, std::string_view field) {
  std::map<std::string, double, std::less<>> out;
  auto it = obj.find(field);
  if (it == obj.end() || it->is_null()) return out;
  if (!it->is_object()) throw DataError(std::string(field) + " must be an object");
  for (const auto& [name, value] : it->items()) {
    if (!value.is_number()) throw DataError(std::string(field) + "." + name + " must be a number");
    out.emplace(name, value.get<double>());
  }
  return out;
}

template <typename T>
T value_or(const json& obj, std::string_view key, T fallback) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return fallback;
  return it->get<T>();
}

ManifestEntry parse_entry(const json& r) {
  ManifestEntry e;
  e.id = r.at("id").get<std::string>();
  e.prompt_text = value_or<std::string>(r, "prompt_text", "");
  e.output_text = value_or<std::string>(r, "output_text", "");
  e.token_count = r.at("token_count").get<std::size_t>();
  e.quality = read_scores(r, "quality");
  e.external_scores = read_scores(r, "external_scores");
  if (auto it = r.find("claims"); it != r.end() && !it->is_null()) {
    for (const json& c : *it) {
      Claim claim;
      claim.span_start = c.at("span_start").get<std::size_t>();
      claim.span_end = c.at("span_end").get<std::size_t>();
      if (auto lab = c.find("label"); lab != c.end() && !lab->is_null()) {
        const auto s = lab->get<std::string>();
        if (s == "factual") {
          claim.label = ClaimLabel::Factual;
        } else if (s == "nonfactual") {
          claim.label = ClaimLabel::Nonfactual;
        } else {
          throw DataError("claim label must be 'factual' or 'nonfactual', got '" + s + "'");
        }
      }
      claim.external_scores = read_scores(c, "external_scores");
      e.claims.push_back(std::move(claim));
    }
  }
  if (auto it = r.find("split"); it != r.end() && !it->is_null()) {
    const auto s = it->get<std::string>();
    if (s == "train") {
      e.split = Split::Train;
    } else if (s == "test") {
      e.split = Split::Test;
    } else {
      throw DataError("split must be 'train' or 'test', got '" + s + "'");
    }
  }
  return e;
}

}  // namespace

Manifest parse_manifest(const json& doc) {
  const json* list = &doc;
  if (doc.is_object()) list = &doc.at("responses");
  if (!list->is_array()) throw DataError("manifest: 'responses' must be an array");
  std::vector<ManifestEntry> entries;
  entries.reserve(list->size());
  for (const json& r : *list) {
    try {
      entries.push_back(parse_entry(r));
    } catch (const json::exception& e) {
      throw DataError(std::string("manifest: ") + e.what());
    }
  }
  return Manifest(std::move(entries));
}

Manifest load_manifest(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  return parse_manifest(doc);
}

json to_json(const Manifest& manifest) {
  json list = json::array();
  for (const ManifestEntry& e : manifest.responses()) {
    json r = {{"id", e.id},
              {"prompt_text", e.prompt_text},
              {"output_text", e.output_text},
              {"token_count", e.token_count},
              {"quality", e.quality}};
    if (!e.external_scores.empty()) r["external_scores"] = e.external_scores;
    if (!e.claims.empty()) {
      json claims = json::array();
      for (const Claim& c : e.claims) {
        json cj = {{"span_start", c.span_start}, {"span_end", c.span_end}};
        if (c.label) cj["label"] = *c.label == ClaimLabel::Factual ? "factual" : "nonfactual";
        if (!c.external_scores.empty()) cj["external_scores"] = c.external_scores;
        claims.push_back(std::move(cj));
      }
      r["claims"] = std::move(claims);
    }
    if (e.split) r["split"] = *e.split == Split::Train ? "train" : "test";
    list.push_back(std::move(r));
  }
  return {{"responses", std::move(list)}};
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  write_file(path, to_json(manifest).dump(1) + "\n");
}

std::vector<ValidationIssue> validate(const EmbeddingStore& store, const Manifest& manifest) {
  std::vector<ValidationIssue> issues;
  auto report = [&](const std::string& id, std::string kind, std::string detail) {
    issues.push_back({id, std::move(kind), std::move(detail)});
  };
  auto finite = [](const std::vector<float>& v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
  };

  for (const ManifestEntry& e : manifest.responses()) {
    const ResponseTensors* r = store.find(e.id);
    if (r == nullptr || !r->hidden) report(e.id, "missing tensors", "resp/" + e.id + "/hidden");
    if (r == nullptr || !r->logprob) report(e.id, "missing tensors", "resp/" + e.id + "/logprob");
    if (r != nullptr && (r->hidden || r->logprob) && r->tokens != e.token_count) {
      report(e.id, "token count mismatch",
             "manifest token_count=" + std::to_string(e.token_count) + ", store has " +
                 std::to_string(r->tokens) + " tokens");
    }
    for (std::size_t c = 0; c < e.claims.size(); ++c) {
      const Claim& claim = e.claims[c];
      if (!(claim.span_start < claim.span_end && claim.span_end <= e.token_count)) {
        report(e.id, "claim span out of range",
               "claim " + std::to_string(c) + ": (" + std::to_string(claim.span_start) + ", " +
                   std::to_string(claim.span_end) + ") with token_count=" + std::to_string(e.token_count));
      }
    }
    if (r != nullptr && ((r->hidden && !finite(*r->hidden)) || (r->logprob && !finite(*r->logprob)))) {
      report(e.id, "non-finite values", "hidden or logprob tensor contains NaN or Inf");
    }
  }
  return issues;
}

}  // namespace tmd::store
