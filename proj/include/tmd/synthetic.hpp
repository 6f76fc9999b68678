// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic corpora with a planted mean shift for end-to-end checks.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tmd/embedstore.hpp"
#include "tmd/manifest.hpp"

namespace tmd::synth {

struct CorpusConfig {
  std::size_t n_train = 500;
  std::size_t n_test = 200;
  std::size_t layers = 6;
  std::size_t dim = 16;
  std::size_t shift_layer = 4;  // 1-based
  std::size_t min_tokens = 10;
  std::size_t max_tokens = 30;  // exclusive
  double p_incorrect = 0.5;
  std::uint64_t seed = 1;
};

struct Corpus {
  std::vector<store::StoreRecord> records;
  store::Manifest manifest;
};

/// Sequence-level corpus. Hidden states are standard normal; at the shift layer
/// the component along the unit diagonal is damped and offset by an amount that
/// grows as quality falls. Quality metric "alignscore" lies in [0.02, 0.3] for
/// incorrect and [0.9, 1] for correct responses; log-probabilities are weakly
/// quality dependent, so MSP is informative but imperfect.
Corpus make_corpus(const CorpusConfig& config);

/// Background corpus: broad Gaussian tokens with no quality, all train split.
Corpus make_background(std::size_t n, std::size_t layers, std::size_t dim, std::uint64_t seed);

/// Claim-level corpus: each response carries 2 to 4 claims; nonfactual claims'
/// tokens are shifted at the shift layer. Every claim carries a noisy external
/// uncertainty "ccp"; responses carry "alignscore" = fraction of factual claims.
Corpus make_claim_corpus(const CorpusConfig& config);

}  // namespace tmd::synth
