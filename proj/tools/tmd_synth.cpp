// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

// tmd-synth: writes a planted-shift corpus (store + manifest) and a background
// store into a directory.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>

#include "tmd/error.hpp"
#include "tmd/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic planted-shift corpora"};
  tmd::synth::CorpusConfig cfg;
  std::string out_dir = ".";
  std::string kind = "sequence";
  std::size_t background = 400;
  app.add_option("-o,--out", out_dir, "Output directory");
  app.add_option("--kind", kind, "sequence | claim")->check(CLI::IsMember({"sequence", "claim"}));
  app.add_option("--train", cfg.n_train, "Training responses");
  app.add_option("--test", cfg.n_test, "Test responses");
  app.add_option("--layers", cfg.layers, "Layers");
  app.add_option("--dim", cfg.dim, "Hidden width");
  app.add_option("--shift-layer", cfg.shift_layer, "1-based layer carrying the shift");
  app.add_option("--background", background, "Background responses (0 to skip)");
  app.add_option("--seed", cfg.seed, "Seed");
  CLI11_PARSE(app, argc, argv);

  try {
    const std::filesystem::path dir = out_dir;
    const auto corpus = kind == "claim" ? tmd::synth::make_claim_corpus(cfg) : tmd::synth::make_corpus(cfg);
    tmd::store::write_store_file(dir / "store.tmd", corpus.records);
    tmd::store::save_manifest(dir / "manifest.json", corpus.manifest);
    if (background > 0) {
      const auto bg = tmd::synth::make_background(background, cfg.layers, cfg.dim, cfg.seed + 1000);
      tmd::store::write_store_file(dir / "background.tmd", bg.records);
      tmd::store::save_manifest(dir / "background.json", bg.manifest);
    }
  } catch (const tmd::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
