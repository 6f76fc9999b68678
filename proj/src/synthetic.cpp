// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tmd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>

namespace tmd::synth {

namespace {

std::string make_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%05zu", prefix, i);
  return buf;
}

class Generator {
 public:
  explicit Generator(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(rng_); }
  std::size_t integer(std::size_t lo, std::size_t hi_exclusive) {
    return std::uniform_int_distribution<std::size_t>(lo, hi_exclusive - 1)(rng_);
  }
  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }

 private:
  std::mt19937_64 rng_;
};

// Standard-normal hidden states; at `shift_layer` the diagonal component is
// scaled by 0.25 and then offset by shift(t) along the unit diagonal.
template <typename ShiftFn>
std::vector<float> hidden_states(Generator& g, std::size_t tokens, std::size_t layers, std::size_t dim,
                                 std::size_t shift_layer, ShiftFn shift) {
  std::vector<float> out(tokens * layers * dim);
  std::vector<double> h(dim);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t l = 0; l < layers; ++l) {
      for (double& x : h) x = g.normal();
      if (l + 1 == shift_layer) {
        double proj = 0.0;
        for (double x : h) proj += x * inv_sqrt_d;
        const double offset = shift(t) - 0.75 * proj;
        for (double& x : h) x += offset * inv_sqrt_d;
      }
      float* dst = out.data() + (t * layers + l) * dim;
      for (std::size_t j = 0; j < dim; ++j) dst[j] = static_cast<float>(h[j]);
    }
  }
  return out;
}

float token_logprob(Generator& g, double badness) {
  const double lp = std::log(g.uniform(0.5, 1.0)) * (0.02 + 0.06 * badness) + std::min(0.0, std::max(-0.01, g.normal(0.0, 0.05)));
  return static_cast<float>(std::min(0.0, lp));
}

}  // namespace

Corpus make_corpus(const CorpusConfig& config) {
  Generator g(config.seed);
  Corpus out;
  std::vector<store::ManifestEntry> entries;
  const std::size_t total = config.n_train + config.n_test;
  for (std::size_t i = 0; i < total; ++i) {
    const bool train = i < config.n_train;
    const bool incorrect = g.bernoulli(config.p_incorrect);
    const double q = incorrect ? g.uniform(0.02, 0.3) : g.uniform(0.9, 1.0);
    const std::size_t tokens = g.integer(config.min_tokens, config.max_tokens);
    const double shift = incorrect ? 3.0 + 5.0 * (0.3 - q) / 0.28 : 3.0 * (1.0 - q);

    store::StoreRecord rec;
    rec.id = train ? make_id("train", i) : make_id("test", i - config.n_train);
    rec.tokens = tokens;
    rec.layers = config.layers;
    rec.dim = config.dim;
    rec.hidden = hidden_states(g, tokens, config.layers, config.dim, config.shift_layer,
                               [shift](std::size_t) { return shift; });
    for (std::size_t t = 0; t < tokens; ++t) rec.logprob.push_back(token_logprob(g, 1.0 - q));

    store::ManifestEntry e;
    e.id = rec.id;
    e.prompt_text = "synthetic prompt " + std::to_string(i);
    e.output_text = incorrect ? "wrong answer" : "right answer";
    e.token_count = tokens;
    e.quality["alignscore"] = q;
    e.quality["accuracy"] = incorrect ? 0.0 : 1.0;
    e.split = train ? store::Split::Train : store::Split::Test;
    entries.push_back(std::move(e));
    out.records.push_back(std::move(rec));
  }
  out.manifest = store::Manifest(std::move(entries));
  return out;
}

Corpus make_background(std::size_t n, std::size_t layers, std::size_t dim, std::uint64_t seed) {
  Generator g(seed);
  Corpus out;
  std::vector<store::ManifestEntry> entries;
  for (std::size_t i = 0; i < n; ++i) {
    store::StoreRecord rec;
    rec.id = make_id("bg", i);
    rec.tokens = g.integer(10, 30);
    rec.layers = layers;
    rec.dim = dim;
    rec.hidden.resize(rec.tokens * layers * dim);
    for (float& x : rec.hidden) x = static_cast<float>(g.normal(0.5, 2.0));
    for (std::size_t t = 0; t < rec.tokens; ++t) rec.logprob.push_back(token_logprob(g, 0.5));

    store::ManifestEntry e;
    e.id = rec.id;
    e.token_count = rec.tokens;
    e.split = store::Split::Train;
    entries.push_back(std::move(e));
    out.records.push_back(std::move(rec));
  }
  out.manifest = store::Manifest(std::move(entries));
  return out;
}

Corpus make_claim_corpus(const CorpusConfig& config) {
  Generator g(config.seed);
  Corpus out;
  std::vector<store::ManifestEntry> entries;
  const std::size_t total = config.n_train + config.n_test;
  for (std::size_t i = 0; i < total; ++i) {
    const bool train = i < config.n_train;
    const std::size_t n_claims = g.integer(2, 5);
    const std::size_t per_claim = g.integer(5, 10);
    const std::size_t tokens = n_claims * per_claim + 2;

    store::ManifestEntry e;
    std::vector<double> shifts(tokens, 0.0);
    std::vector<double> badness(tokens, 0.0);
    std::size_t nonfactual = 0;
    for (std::size_t c = 0; c < n_claims; ++c) {
      store::Claim claim;
      claim.span_start = 1 + c * per_claim;
      claim.span_end = claim.span_start + per_claim;
      const bool bad = g.bernoulli(config.p_incorrect);
      nonfactual += bad ? 1 : 0;
      claim.label = bad ? store::ClaimLabel::Nonfactual : store::ClaimLabel::Factual;
      const double shift = bad ? g.uniform(2.5, 4.0) : g.uniform(0.0, 0.5);
      for (std::size_t t = claim.span_start; t < claim.span_end; ++t) {
        shifts[t] = shift;
        badness[t] = bad ? 0.7 : 0.1;
      }
      claim.external_scores["ccp"] = (bad ? 0.6 : 0.0) + g.normal(0.0, 0.35);
      e.claims.push_back(std::move(claim));
    }

    store::StoreRecord rec;
    rec.id = train ? make_id("train", i) : make_id("test", i - config.n_train);
    rec.tokens = tokens;
    rec.layers = config.layers;
    rec.dim = config.dim;
    rec.hidden = hidden_states(g, tokens, config.layers, config.dim, config.shift_layer,
                               [&shifts](std::size_t t) { return shifts[t]; });
    for (std::size_t t = 0; t < tokens; ++t) rec.logprob.push_back(token_logprob(g, badness[t]));

    e.id = rec.id;
    e.prompt_text = "synthetic prompt " + std::to_string(i);
    e.output_text = "synthetic biography";
    e.token_count = tokens;
    e.quality["alignscore"] = 1.0 - static_cast<double>(nonfactual) / static_cast<double>(n_claims);
    e.split = train ? store::Split::Train : store::Split::Test;
    entries.push_back(std::move(e));
    out.records.push_back(std::move(rec));
  }
  out.manifest = store::Manifest(std::move(entries));
  return out;
}

}  // namespace tmd::synth
