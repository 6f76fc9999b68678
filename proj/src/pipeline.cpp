// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tmd/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tmd/density.hpp"
#include "tmd/embedstore.hpp"
#include "tmd/error.hpp"
#include "tmd/features.hpp"
#include "tmd/manifest.hpp"
#include "tmd/metrics.hpp"
#include "tmd/model_io.hpp"
#include "tmd/parallel.hpp"

namespace tmd::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Shortest representation that round-trips.
std::string num(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string short_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// ---- config ---------------------------------------------------------------

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw DataError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw DataError("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

template <typename T>
void read_key(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError("config: bad value for '" + (where.empty() ? std::string(key) : where + "." + key) + "'");
  }
}

void read_count(const json& obj, const char* key, std::size_t& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned()) throw DataError(std::string("config: '") + key + "' must be a non-negative integer");
  out = v.get<std::size_t>();
}

void resolve_path(json& value, const fs::path& base) {
  if (!value.is_string()) return;
  const fs::path p = value.get<std::string>();
  if (p.empty() || p.is_absolute()) return;
  value = (base / p).lexically_normal().string();
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const std::string& require(const std::string& path, const char* key) {
  if (path.empty()) throw DataError(std::string("config: paths.") + key + " is not set");
  return path;
}

// ---- CSV ------------------------------------------------------------------

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("bad number '" + s + "' in " + what);
  }
}

void write_table(const fs::path& path, const std::string& header, const std::vector<std::pair<double, double>>& rows) {
  std::string out = header + "\n";
  for (const auto& [x, y] : rows) out += num(x) + "," + num(y) + "\n";
  store::write_file(path, out);
}

// ---- data loading -----------------------------------------------------------

struct Inputs {
  store::EmbeddingStore store;
  store::Manifest manifest;
  std::optional<store::EmbeddingStore> background;
};

Inputs load_inputs(const RunConfig& config, bool need_background) {
  Inputs in;
  in.store = store::read_store(require(config.paths.store, "store"));
  in.manifest = store::load_manifest(require(config.paths.manifest, "manifest"));
  if (!config.paths.background_store.empty()) {
    in.background = store::read_store(config.paths.background_store);
  } else if (need_background) {
    throw DataError("the RMD variant needs paths.background_store");
  }
  return in;
}

void require_valid(const Inputs& in) {
  const auto issues = store::validate(in.store, in.manifest);
  if (issues.empty()) return;
  const auto& first = issues.front();
  throw DataError("validation failed with " + std::to_string(issues.size()) + " issue(s); first: " +
                  first.response_id + ": " + first.kind + " (" + first.detail + ")");
}

std::vector<std::string> test_ids(const store::Manifest& manifest) {
  auto ids = manifest.test_ids();
  if (ids.empty()) throw DataError("no test-split responses");
  return ids;
}

// Training responses whose quality passes the selection rule.
std::vector<std::string> selected_train_ids(const RunConfig& config, const store::Manifest& manifest) {
  std::vector<std::string> out;
  for (const std::string& id : manifest.train_ids()) {
    if (config.raw_selection || manifest.at(id).quality_of(config.quality_metric) > config.tau) out.push_back(id);
  }
  if (out.size() < 2) throw DataError("fewer than 2 training responses pass the selection rule; lower tau");
  return out;
}

std::vector<std::string> eval_metric_names(const RunConfig& config) {
  std::vector<std::string> out{config.quality_metric};
  for (const auto& m : config.eval_metrics) {
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  return out;
}

// Quality per scored unit: the metric value (sequence) or 1 - nonfactual (claim).
std::vector<double> unit_quality(const store::Manifest& manifest, std::span<const regress::ScoreRow> rows,
                                 const std::string& metric) {
  std::vector<double> q;
  q.reserve(rows.size());
  for (const auto& r : rows) {
    const auto& e = manifest.at(r.id);
    if (!r.claim_index) {
      q.push_back(e.quality_of(metric));
      continue;
    }
    const auto& claim = e.claims.at(*r.claim_index);
    if (!claim.label) throw DataError("claim " + std::to_string(*r.claim_index) + " of '" + r.id + "' has no label");
    q.push_back(*claim.label == store::ClaimLabel::Nonfactual ? 0.0 : 1.0);
  }
  return q;
}

double supervised_prr(const RunConfig& config, const Inputs& in, const regress::FitConfig& fc) {
  const auto fitted = regress::fit_supervised(in.store, in.manifest, in.background ? &*in.background : nullptr, fc);
  const auto ids = test_ids(in.manifest);
  const auto rows = regress::score_responses(fitted.model, in.store, in.manifest, ids);
  std::vector<double> u;
  for (const auto& r : rows) u.push_back(r.score);
  return metrics::prr(u, unit_quality(in.manifest, rows, config.quality_metric));
}

}  // namespace

// ---- config API -------------------------------------------------------------

json to_json(const RunConfig& c) {
  json huq = {{"enabled", c.huq.enabled}};
  huq["external_score"] = c.huq.external_score ? json(*c.huq.external_score) : json(nullptr);
  return {
      {"paths",
       {{"store", c.paths.store},
        {"background_store", c.paths.background_store},
        {"manifest", c.paths.manifest},
        {"model", c.paths.model},
        {"scores", c.paths.scores},
        {"report", c.paths.report}}},
      {"variant", c.variant},
      {"use_prob_feature", c.use_prob_feature},
      {"level", c.level},
      {"tau", c.tau},
      {"quality_metric", c.quality_metric},
      {"eval_metrics", c.eval_metrics},
      {"n_components", c.n_components},
      {"ridge_base", c.ridge_base},
      {"ols_ridge", c.ols_ridge},
      {"split_ratio", c.split_ratio},
      {"seed", c.seed},
      {"prob_feature_mode", c.prob_feature_mode},
      {"raw_selection", c.raw_selection},
      {"refit_unfiltered", c.refit_unfiltered},
      {"huq", huq},
      {"sweep", {{"tau", c.sweep.tau}, {"n_components", c.sweep.n_components}, {"train_size", c.sweep.train_size}}},
  };
}

RunConfig config_from_json(const json& doc) {
  RunConfig c;
  check_keys(doc,
             {"paths", "variant", "use_prob_feature", "level", "tau", "quality_metric", "eval_metrics",
              "n_components", "ridge_base", "ols_ridge", "split_ratio", "seed", "prob_feature_mode", "raw_selection",
              "refit_unfiltered", "huq", "sweep"},
             "");
  if (doc.contains("paths")) {
    const json& p = doc.at("paths");
    check_keys(p, {"store", "background_store", "manifest", "model", "scores", "report"}, "paths");
    read_key(p, "store", c.paths.store, "paths");
    read_key(p, "background_store", c.paths.background_store, "paths");
    read_key(p, "manifest", c.paths.manifest, "paths");
    read_key(p, "model", c.paths.model, "paths");
    read_key(p, "scores", c.paths.scores, "paths");
    read_key(p, "report", c.paths.report, "paths");
  }
  read_key(doc, "variant", c.variant, "");
  read_key(doc, "use_prob_feature", c.use_prob_feature, "");
  read_key(doc, "level", c.level, "");
  read_key(doc, "tau", c.tau, "");
  read_key(doc, "quality_metric", c.quality_metric, "");
  read_key(doc, "eval_metrics", c.eval_metrics, "");
  read_count(doc, "n_components", c.n_components);
  read_key(doc, "ridge_base", c.ridge_base, "");
  read_key(doc, "ols_ridge", c.ols_ridge, "");
  read_key(doc, "split_ratio", c.split_ratio, "");
  if (doc.contains("seed")) {
    if (!doc.at("seed").is_number_unsigned()) throw DataError("config: 'seed' must be a non-negative integer");
    c.seed = doc.at("seed").get<std::uint64_t>();
  }
  read_key(doc, "prob_feature_mode", c.prob_feature_mode, "");
  read_key(doc, "raw_selection", c.raw_selection, "");
  read_key(doc, "refit_unfiltered", c.refit_unfiltered, "");
  if (doc.contains("huq")) {
    const json& h = doc.at("huq");
    check_keys(h, {"enabled", "external_score"}, "huq");
    read_key(h, "enabled", c.huq.enabled, "huq");
    if (h.contains("external_score") && !h.at("external_score").is_null()) {
      std::string name;
      read_key(h, "external_score", name, "huq");
      c.huq.external_score = name;
    }
  }
  if (doc.contains("sweep")) {
    const json& s = doc.at("sweep");
    check_keys(s, {"tau", "n_components", "train_size"}, "sweep");
    read_key(s, "tau", c.sweep.tau, "sweep");
    read_key(s, "n_components", c.sweep.n_components, "sweep");
    read_key(s, "train_size", c.sweep.train_size, "sweep");
  }

  if (c.variant != "MD" && c.variant != "RMD") throw DataError("config: variant must be MD or RMD");
  if (c.level != "sequence" && c.level != "claim") throw DataError("config: level must be sequence or claim");
  if (c.prob_feature_mode != "product" && c.prob_feature_mode != "geometric_mean") {
    throw DataError("config: prob_feature_mode must be product or geometric_mean");
  }
  if (!std::isfinite(c.tau)) throw DataError("config: tau must be finite");
  if (c.n_components == 0) throw DataError("config: n_components must be at least 1");
  if (!(c.ridge_base >= 0.0) || !(c.ols_ridge >= 0.0)) throw DataError("config: ridges must be non-negative");
  if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) throw DataError("config: split_ratio must lie in (0, 1)");
  return c;
}

RunConfig load_config(const std::optional<fs::path>& file, std::span<const std::string> overrides,
                      const fs::path& cwd) {
  json doc = json::object();
  if (file) {
    try {
      doc = json::parse(store::read_file(*file));
    } catch (const json::exception& e) {
      throw DataError("malformed config file: " + std::string(e.what()));
    }
    if (!doc.is_object()) throw DataError("config file must hold a JSON object");
    if (doc.contains("paths") && doc["paths"].is_object()) {
      const fs::path base = fs::absolute(*file).parent_path();
      for (auto& [key, value] : doc["paths"].items()) resolve_path(value, base);
    }
  }
  for (const std::string& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw DataError("override '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq);
    const std::string text = item.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    json* node = &doc;
    std::string part;
    std::istringstream parts(key);
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) path.push_back(part);
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!node->contains(path[i])) (*node)[path[i]] = json::object();
      node = &(*node)[path[i]];
      if (!node->is_object()) throw DataError("override '" + key + "' descends into a non-object");
    }
    if (path.size() == 2 && path[0] == "paths") resolve_path(value, cwd);
    (*node)[path.back()] = std::move(value);
  }
  RunConfig c = config_from_json(doc);
  for (std::string* p : {&c.paths.store, &c.paths.background_store, &c.paths.manifest, &c.paths.model,
                         &c.paths.scores, &c.paths.report}) {
    if (!p->empty() && fs::path(*p).is_relative()) *p = (cwd / *p).lexically_normal().string();
  }
  return c;
}

std::string config_checksum(const RunConfig& config) {
  json doc = to_json(config);
  doc["paths"].erase("model");
  doc["paths"].erase("scores");
  doc["paths"].erase("report");
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(doc.dump())));
  return buf;
}

regress::FitConfig fit_config(const RunConfig& c) {
  regress::FitConfig f;
  f.variant = c.variant == "RMD" ? features::Variant::RMD : features::Variant::MD;
  f.use_prob_feature = c.use_prob_feature;
  f.level = c.level == "claim" ? regress::Level::Claim : regress::Level::Sequence;
  f.quality_metric = c.quality_metric;
  f.tau = c.tau;
  f.n_components = c.n_components;
  f.ridge_base = c.ridge_base;
  f.ols_ridge = c.ols_ridge;
  f.split_ratio = c.split_ratio;
  f.seed = c.seed;
  f.prob_mode = c.prob_feature_mode == "geometric_mean" ? features::ProbFeatureMode::GeometricMean
                                                        : features::ProbFeatureMode::Product;
  f.raw_selection = c.raw_selection;
  f.refit_unfiltered = c.refit_unfiltered;
  f.huq = c.huq.enabled;
  f.huq_external_score = c.huq.external_score;
  return f;
}

// ---- score files ------------------------------------------------------------

void write_scores(const fs::path& path, std::span<const regress::ScoreRow> rows, regress::Level level) {
  std::string out = level == regress::Level::Claim ? "id,claim_index,score\n" : "id,score\n";
  for (const auto& r : rows) {
    out += csv_field(r.id) + ",";
    if (level == regress::Level::Claim) out += std::to_string(r.claim_index.value_or(0)) + ",";
    out += num(r.score) + "\n";
  }
  store::write_file(path, out);
}

std::vector<ScoreFileRow> read_scores(const fs::path& path) {
  std::istringstream in(store::read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty scores file");
  const bool claims = line == "id,claim_index,score";
  if (!claims && line != "id,score") throw DataError("unexpected scores header '" + line + "'");
  std::vector<ScoreFileRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = csv_split(line);
    if (f.size() != (claims ? 3u : 2u)) throw DataError("bad scores row '" + line + "'");
    ScoreFileRow r;
    r.id = f[0];
    if (claims) r.claim_index = static_cast<std::size_t>(parse_double(f[1], "claim_index"));
    r.score = parse_double(f.back(), "scores file");
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---- commands -----------------------------------------------------------------

int cmd_validate(const RunConfig& config, std::ostream& out) {
  const auto store = store::read_store(require(config.paths.store, "store"));
  const auto manifest = store::load_manifest(require(config.paths.manifest, "manifest"));
  const auto issues = store::validate(store, manifest);
  for (const auto& i : issues) out << i.response_id << ": " << i.kind << ": " << i.detail << "\n";
  if (issues.empty()) out << "ok: " << manifest.responses().size() << " responses\n";
  return issues.empty() ? 0 : 1;
}

void cmd_fit(const RunConfig& config, std::ostream& log) {
  const Inputs in = load_inputs(config, config.variant == "RMD");
  require_valid(in);
  const std::string& out_path = require(config.paths.model, "model");
  auto fitted = regress::fit_supervised(in.store, in.manifest, in.background ? &*in.background : nullptr,
                                        fit_config(config));
  fitted.model.meta.config_checksum = config_checksum(config);

  log << "split: first=" << fitted.first_ids.size() << " second=" << fitted.second_ids.size() << "\n";
  for (std::size_t l = 0; l < fitted.final_ridges.size(); ++l) {
    log << "layer " << (l + 1) << ": ridge first=" << fitted.first_ridges[l] << " final=" << fitted.final_ridges[l]
        << "\n";
  }
  log << "components: " << fitted.model.projector.n_components() << "\n";
  if (fitted.model.huq) {
    const auto& h = *fitted.model.huq;
    log << "huq: delta_min=" << h.delta_min << " delta_max=" << h.delta_max << " alpha=" << h.alpha << "\n";
  }
  for (const auto& w : fitted.model.meta.warnings) log << "warning: " << w << "\n";
  model_io::save_model(out_path, fitted.model);
}

void cmd_score(const RunConfig& config, std::ostream& log) {
  const auto model = model_io::load_model(require(config.paths.model, "model"));
  const auto store = store::read_store(require(config.paths.store, "store"));
  const auto manifest = store::load_manifest(require(config.paths.manifest, "manifest"));
  regress::check_compatible(model, store);
  const auto ids = test_ids(manifest);
  const auto rows = regress::score_responses(model, store, manifest, ids);
  write_scores(require(config.paths.scores, "scores"), rows, model.level);
  log << "scored " << rows.size() << (model.level == regress::Level::Claim ? " claims" : " responses") << "\n";
}

void cmd_eval(const RunConfig& config, std::ostream& log) {
  const Inputs in = load_inputs(config, false);
  const fs::path dir = require(config.paths.report, "report");
  const auto file_rows = read_scores(require(config.paths.scores, "scores"));
  if (file_rows.size() < 2) throw DataError("need at least 2 scored units to evaluate");
  const bool claim_level = file_rows.front().claim_index.has_value();

  std::vector<regress::ScoreRow> rows;
  for (const auto& r : file_rows) {
    const auto& e = in.manifest.at(r.id);
    if (r.claim_index && *r.claim_index >= e.claims.size()) {
      throw DataError("claim index " + std::to_string(*r.claim_index) + " out of range for '" + r.id + "'");
    }
    rows.push_back({r.id, r.claim_index, r.score, std::nullopt, r.score});
  }

  // Baseline uncertainties per unit.
  std::map<std::string, std::vector<double>> methods;
  methods["supervised"] = {};
  for (const auto& r : rows) methods["supervised"].push_back(r.score);
  std::vector<double> msp(rows.size());
  std::vector<double> ppl(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    const auto& r = rows[i];
    auto lp = in.store.logprob(r.id);
    if (r.claim_index) {
      const auto& c = in.manifest.at(r.id).claims[*r.claim_index];
      lp = lp.subspan(c.span_start, c.span_end - c.span_start);
    }
    msp[i] = features::msp_uncertainty(lp);
    ppl[i] = features::perplexity(lp);
  });
  methods["msp"] = std::move(msp);
  methods["perplexity"] = std::move(ppl);

  if (!claim_level) {
    const std::size_t layer = in.store.num_layers();
    const auto train = selected_train_ids(config, in.manifest);
    const auto in_stats = density::fit_sequence_gaussian(in.store, train, layer, config.ridge_base);
    std::optional<density::GaussianLayerStats> bg_stats;
    if (in.background) {
      const auto bg_ids = in.background->ids();
      bg_stats = density::fit_sequence_gaussian(*in.background, bg_ids, layer, config.ridge_base);
    }
    std::vector<double> md(rows.size());
    std::vector<double> rmd(rows.size());
    parallel_for(rows.size(), [&](std::size_t i) {
      const Eigen::VectorXd e = density::sequence_embedding(in.store.hidden(rows[i].id), layer);
      md[i] = density::mahalanobis(in_stats, e);
      if (bg_stats) rmd[i] = density::relative_mahalanobis(in_stats, *bg_stats, e);
    });
    methods["seq_md"] = std::move(md);
    if (bg_stats) methods["seq_rmd"] = std::move(rmd);
  } else if (config.huq.external_score) {
    std::vector<double> ext;
    for (const auto& r : rows) {
      const auto& scores = in.manifest.at(r.id).claims[*r.claim_index].external_scores;
      const auto it = scores.find(*config.huq.external_score);
      if (it == scores.end()) throw DataError("claim lacks external score '" + *config.huq.external_score + "'");
      ext.push_back(it->second);
    }
    methods[*config.huq.external_score] = std::move(ext);
  }

  const auto metric_names = claim_level ? std::vector<std::string>{"claim_factual"} : eval_metric_names(config);
  std::map<std::string, std::vector<double>> qualities;
  for (const auto& m : metric_names) qualities[m] = unit_quality(in.manifest, rows, m);
  std::vector<int> labels;
  if (claim_level) {
    for (double q : qualities.at("claim_factual")) labels.push_back(q == 0.0 ? 1 : 0);
  }

  json report_methods = json::object();
  std::string summary = "method,metric,prr\n";
  std::string auc_summary = "method,roc_auc,pr_auc\n";
  const auto grid = metrics::default_rejection_grid();
  for (const auto& [name, u] : methods) {
    metrics::EvalReport r;
    r.n = u.size();
    for (const auto& m : metric_names) {
      r.prr[m] = metrics::prr(u, qualities.at(m));
      summary += name + "," + m + "," + num(r.prr[m]) + "\n";
    }
    r.rejection_curve = metrics::rejection_table(u, qualities.at(metric_names.front()), grid);
    if (claim_level) {
      r.roc_auc = metrics::roc_auc(u, labels);
      r.pr_auc = metrics::pr_auc(u, labels);
      auc_summary += name + "," + num(*r.roc_auc) + "," + num(*r.pr_auc) + "\n";
    }
    metrics::write_rejection_csv(dir / ("rejection_" + name + ".csv"), r.rejection_curve);
    report_methods[name] = metrics::to_json(r);
    log << name << ": PRR(" << metric_names.front() << ")=" << short_num(r.prr.at(metric_names.front()));
    if (claim_level) log << " ROC-AUC=" << short_num(*r.roc_auc) << " PR-AUC=" << short_num(*r.pr_auc);
    log << "\n";
  }

  const json doc = {{"config_checksum", config_checksum(config)},
                    {"level", claim_level ? "claim" : "sequence"},
                    {"primary_metric", metric_names.front()},
                    {"methods", report_methods}};
  store::write_file(dir / "eval.json", doc.dump(2) + "\n");
  store::write_file(dir / "eval_summary.csv", summary);
  if (claim_level) store::write_file(dir / "eval_auc.csv", auc_summary);
}

void cmd_sweep(const RunConfig& config, const std::string& axis, std::ostream& log) {
  const Inputs in = load_inputs(config, config.variant == "RMD");
  require_valid(in);
  const fs::path dir = require(config.paths.report, "report");

  if (axis == "layer") {
    if (config.level != "sequence") throw DataError("the layer sweep runs at sequence level");
    const auto ids = test_ids(in.manifest);
    const auto train = in.manifest.train_ids();
    const std::string metric = config.raw_selection ? std::string(density::kAllTokens) : config.quality_metric;
    const auto stats =
        density::fit_all_layers(in.store, density::select_tokens(in.manifest, train, metric, config.tau),
                                config.ridge_base);
    std::vector<density::GaussianLayerStats> bg;
    if (in.background) bg = regress::fit_background(*in.background, config.ridge_base);

    const std::size_t layers = in.store.num_layers();
    const auto n = static_cast<Eigen::Index>(ids.size());
    const auto L = static_cast<Eigen::Index>(layers);
    Eigen::MatrixXd atmd(n, L), atrmd(n, L), smd(n, L), srmd(n, L);
    const auto seq_train = selected_train_ids(config, in.manifest);
    std::vector<density::GaussianLayerStats> seq_in(layers), seq_bg(layers);
    const auto bg_ids = in.background ? in.background->ids() : std::vector<std::string>{};
    parallel_for(layers, [&](std::size_t l) {
      seq_in[l] = density::fit_sequence_gaussian(in.store, seq_train, l + 1, config.ridge_base);
      if (in.background) seq_bg[l] = density::fit_sequence_gaussian(*in.background, bg_ids, l + 1, config.ridge_base);
    });
    parallel_for(ids.size(), [&](std::size_t i) {
      const auto r = static_cast<Eigen::Index>(i);
      const auto h = in.store.hidden(ids[i]);
      atmd.row(r) = features::atmd(h, stats).transpose();
      if (in.background) atrmd.row(r) = features::atrmd(h, stats, bg).transpose();
      for (std::size_t l = 0; l < layers; ++l) {
        const Eigen::VectorXd e = density::sequence_embedding(h, l + 1);
        const auto c = static_cast<Eigen::Index>(l);
        smd(r, c) = density::mahalanobis(seq_in[l], e);
        if (in.background) srmd(r, c) = density::relative_mahalanobis(seq_in[l], seq_bg[l], e);
      }
    });

    std::vector<double> q;
    for (const auto& id : ids) q.push_back(in.manifest.at(id).quality_of(config.quality_metric));
    auto sweep_one = [&](const Eigen::MatrixXd& m, const std::string& name) {
      std::vector<std::pair<double, double>> rows;
      std::size_t best = 0;
      for (Eigen::Index l = 0; l < L; ++l) {
        const Eigen::VectorXd col = m.col(l);
        const double p = metrics::prr(std::span<const double>(col.data(), ids.size()), q);
        rows.emplace_back(static_cast<double>(l + 1), p);
        if (p > rows[best].second) best = static_cast<std::size_t>(l);
      }
      write_table(dir / ("sweep_layer_" + name + ".csv"), "layer,prr", rows);
      log << name << ": best layer " << (best + 1) << " PRR=" << short_num(rows[best].second) << "\n";
    };
    sweep_one(atmd, "atmd");
    sweep_one(smd, "seq_md");
    if (in.background) {
      sweep_one(atrmd, "atrmd");
      sweep_one(srmd, "seq_rmd");
    }
    return;
  }

  std::vector<double> grid;
  regress::FitConfig base = fit_config(config);
  if (axis == "tau") {
    grid = config.sweep.tau;
  } else if (axis == "n_components") {
    std::set<std::size_t> values(config.sweep.n_components.begin(), config.sweep.n_components.end());
    values.insert(in.store.num_layers());
    for (std::size_t v : values) grid.push_back(static_cast<double>(v));
  } else if (axis == "train_size") {
    for (std::size_t v : config.sweep.train_size) grid.push_back(static_cast<double>(v));
    if (grid.empty()) throw DataError("sweep.train_size is empty");
  } else {
    throw DataError("unknown sweep axis '" + axis + "' (layer, tau, n_components, train_size)");
  }

  std::vector<std::pair<double, double>> rows;
  for (double v : grid) {
    regress::FitConfig fc = base;
    if (axis == "tau") fc.tau = v;
    if (axis == "n_components") fc.n_components = static_cast<std::size_t>(v);
    if (axis == "train_size") fc.train_size = static_cast<std::size_t>(v);
    const double p = supervised_prr(config, in, fc);
    rows.emplace_back(v, p);
    log << axis << "=" << num(v) << ": PRR=" << short_num(p) << "\n";
  }
  write_table(dir / ("sweep_" + axis + ".csv"), axis + ",prr", rows);
}

void cmd_report(const RunConfig& config, std::ostream& out) {
  const fs::path dir = require(config.paths.report, "report");
  json doc;
  try {
    doc = json::parse(store::read_file(dir / "eval.json"));
  } catch (const json::exception& e) {
    throw DataError("malformed eval.json: " + std::string(e.what()));
  }
  std::ostringstream md;
  md << "# Evaluation (" << doc.value("level", "") << ", config " << doc.value("config_checksum", "") << ")\n\n";
  md << "| method | PRR | ROC-AUC | PR-AUC | n |\n|---|---|---|---|---|\n";
  const std::string primary = doc.value("primary_metric", "");
  for (const auto& [name, body] : doc.at("methods").items()) {
    const auto r = metrics::eval_report_from_json(body);
    md << "| " << name << " | " << (r.prr.count(primary) ? short_num(r.prr.at(primary)) : "-") << " | "
       << (r.roc_auc ? short_num(*r.roc_auc) : "-") << " | " << (r.pr_auc ? short_num(*r.pr_auc) : "-") << " | "
       << r.n << " |\n";
  }

  std::vector<fs::path> sweeps;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("sweep_", 0) == 0 && entry.path().extension() == ".csv") sweeps.push_back(entry.path());
  }
  std::sort(sweeps.begin(), sweeps.end());
  if (!sweeps.empty()) md << "\n| sweep | best value | PRR |\n|---|---|---|\n";
  for (const auto& path : sweeps) {
    std::istringstream in(store::read_file(path));
    std::string line;
    std::getline(in, line);
    double best_x = 0.0;
    double best_y = -std::numeric_limits<double>::infinity();
    while (std::getline(in, line)) {
      const auto f = csv_split(line);
      if (f.size() != 2) continue;
      const double y = parse_double(f[1], path.string());
      if (y > best_y) {
        best_y = y;
        best_x = parse_double(f[0], path.string());
      }
    }
    md << "| " << path.stem().string() << " | " << num(best_x) << " | " << short_num(best_y) << " |\n";
  }
  store::write_file(dir / "report.md", md.str());
  out << md.str();
}

int exit_code_for_current_exception(std::ostream& err) {
  try {
    throw;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(const std::string& verb, const RunConfig& config, const std::string& axis, std::ostream& out,
        std::ostream& err) {
  try {
    if (verb == "validate") return cmd_validate(config, out);
    if (verb == "fit") {
      cmd_fit(config, err);
    } else if (verb == "score") {
      cmd_score(config, err);
    } else if (verb == "eval") {
      cmd_eval(config, err);
    } else if (verb == "sweep") {
      cmd_sweep(config, axis, err);
    } else if (verb == "report") {
      cmd_report(config, out);
    } else {
      throw DataError("unknown command '" + verb + "'");
    }
    return 0;
  } catch (...) {
    return exit_code_for_current_exception(err);
  }
}

}  // namespace tmd::pipeline
