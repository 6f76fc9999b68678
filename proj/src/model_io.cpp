// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tmd/model_io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>

#include "tmd/embedstore.hpp"
#include "tmd/error.hpp"

namespace tmd::model_io {

namespace {

using nlohmann::json;
using store::Tensor;
using store::TensorMap;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string layer_key(std::string_view group, std::size_t layer, std::string_view field) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03zu", layer);
  return "stats/" + std::string(group) + "/" + buf + "/" + std::string(field);
}

Tensor vec_tensor(const Eigen::VectorXd& v) {
  return Tensor::from_f64({static_cast<std::size_t>(v.size())}, std::span<const double>(v.data(), v.size()));
}

Tensor vec_tensor(const std::vector<double>& v) { return Tensor::from_f64({v.size()}, v); }

Tensor mat_tensor(const Eigen::MatrixXd& m) {
  const RowMatrix r = m;
  return Tensor::from_f64({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                          std::span<const double>(r.data(), r.size()));
}

const Tensor& need(const TensorMap& t, const std::string& name, std::size_t rank) {
  const auto it = t.find(name);
  if (it == t.end()) throw DataError("model file lacks tensor '" + name + "'");
  if (it->second.dtype != store::DType::F64) throw DataError("tensor '" + name + "' must be F64");
  if (it->second.shape.size() != rank) throw DataError("tensor '" + name + "' has wrong rank");
  return it->second;
}

std::vector<double> read_vec(const TensorMap& t, const std::string& name) { return need(t, name, 1).to_f64(); }

Eigen::VectorXd read_evec(const TensorMap& t, const std::string& name) {
  const auto v = read_vec(t, name);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::MatrixXd read_mat(const TensorMap& t, const std::string& name) {
  const Tensor& tensor = need(t, name, 2);
  const auto v = tensor.to_f64();
  return Eigen::Map<const RowMatrix>(v.data(), static_cast<Eigen::Index>(tensor.shape[0]),
                                     static_cast<Eigen::Index>(tensor.shape[1]));
}

json stats_meta(const std::vector<density::GaussianLayerStats>& stats) {
  json out = json::array();
  for (const auto& s : stats) out.push_back({{"layer", s.layer}, {"n_samples", s.n_samples}, {"ridge", s.ridge}});
  return out;
}

void put_stats(TensorMap& t, std::string_view group, const std::vector<density::GaussianLayerStats>& stats) {
  for (const auto& s : stats) {
    t[layer_key(group, s.layer, "mu")] = vec_tensor(s.mu);
    t[layer_key(group, s.layer, "chol")] = mat_tensor(s.chol);
  }
}

std::vector<density::GaussianLayerStats> get_stats(const TensorMap& t, std::string_view group, const json& meta) {
  std::vector<density::GaussianLayerStats> out;
  for (const json& m : meta) {
    density::GaussianLayerStats s;
    s.layer = m.at("layer").get<std::size_t>();
    s.n_samples = m.at("n_samples").get<std::size_t>();
    s.ridge = m.at("ridge").get<double>();
    s.mu = read_evec(t, layer_key(group, s.layer, "mu"));
    s.chol = read_mat(t, layer_key(group, s.layer, "chol"));
    if (s.chol.rows() != s.mu.size() || s.chol.cols() != s.mu.size()) {
      throw DataError("inconsistent statistics for layer " + std::to_string(s.layer));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string variant_name(features::Variant v) { return v == features::Variant::MD ? "MD" : "RMD"; }
std::string level_name(regress::Level l) { return l == regress::Level::Sequence ? "sequence" : "claim"; }
std::string mode_name(features::ProbFeatureMode m) {
  return m == features::ProbFeatureMode::Product ? "product" : "geometric_mean";
}

}  // namespace

std::string encode_model(const regress::UqModel& model) {
  TensorMap t;
  put_stats(t, "in", model.layer_stats);
  if (model.bg_stats) put_stats(t, "bg", *model.bg_stats);
  t["pca/means"] = vec_tensor(model.projector.feature_means);
  t["pca/stds"] = vec_tensor(model.projector.feature_stds);
  t["pca/components"] = mat_tensor(model.projector.components);
  t["pca/explained_variance_ratio"] = vec_tensor(model.projector.explained_variance_ratio);
  t["regression/weights"] = vec_tensor(model.weights);
  t["regression/intercept"] = vec_tensor(std::vector<double>{model.intercept});
  if (model.huq) {
    const auto& h = *model.huq;
    t["huq/thresholds"] = vec_tensor(std::vector<double>{h.delta_min, h.delta_max, h.alpha});
    t["huq/ref_t2_u1"] = vec_tensor(h.ref_t2_u1);
    t["huq/ref_t2_u2"] = vec_tensor(h.ref_t2_u2);
    t["huq/ref_tid_u1"] = vec_tensor(h.ref_tid_u1);
  }

  const regress::ModelMetadata& m = model.meta;
  json meta = {
      {"version", kModelVersion},
      {"variant", variant_name(model.variant)},
      {"use_prob_feature", model.use_prob_feature},
      {"level", level_name(model.level)},
      {"quality_metric", m.quality_metric},
      {"tau", m.tau},
      {"seed", m.seed},
      {"split_ratio", m.split_ratio},
      {"ridge_base", m.ridge_base},
      {"ols_ridge", m.ols_ridge},
      {"n_components", m.n_components},
      {"prob_feature_mode", mode_name(m.prob_mode)},
      {"raw_selection", m.raw_selection},
      {"refit_stats", m.refit_stats},
      {"refit_unfiltered", m.refit_unfiltered},
      {"first_size", m.first_size},
      {"second_size", m.second_size},
      {"degenerate", m.degenerate},
      {"warnings", m.warnings},
      {"config_checksum", m.config_checksum},
      {"layer_stats", stats_meta(model.layer_stats)},
  };
  meta["huq_external_score"] = m.huq_external_score ? json(*m.huq_external_score) : json(nullptr);
  meta["train_size"] = m.train_size ? json(*m.train_size) : json(nullptr);
  if (model.bg_stats) meta["bg_stats"] = stats_meta(*model.bg_stats);
  if (model.huq) meta["huq"] = {{"degenerate", model.huq->degenerate}};
  t["meta"] = Tensor::from_bytes(meta.dump());
  return store::encode_container(t);
}

regress::UqModel decode_model(std::string_view bytes) {
  const TensorMap t = store::decode_container(bytes, {store::DType::F64, store::DType::U8});
  const auto meta_it = t.find("meta");
  if (meta_it == t.end() || meta_it->second.dtype != store::DType::U8) throw DataError("model file lacks meta");

  regress::UqModel model;
  try {
    const json meta = json::parse(meta_it->second.to_string());
    if (meta.at("version").get<std::string>() != kModelVersion) {
      throw DataError("unsupported model version '" + meta.at("version").get<std::string>() + "'");
    }
    const auto variant = meta.at("variant").get<std::string>();
    if (variant != "MD" && variant != "RMD") throw DataError("unknown variant '" + variant + "'");
    model.variant = variant == "MD" ? features::Variant::MD : features::Variant::RMD;
    const auto level = meta.at("level").get<std::string>();
    if (level != "sequence" && level != "claim") throw DataError("unknown level '" + level + "'");
    model.level = level == "sequence" ? regress::Level::Sequence : regress::Level::Claim;
    model.use_prob_feature = meta.at("use_prob_feature").get<bool>();

    regress::ModelMetadata& m = model.meta;
    m.quality_metric = meta.at("quality_metric").get<std::string>();
    m.tau = meta.at("tau").get<double>();
    m.seed = meta.at("seed").get<std::uint64_t>();
    m.split_ratio = meta.at("split_ratio").get<double>();
    m.ridge_base = meta.at("ridge_base").get<double>();
    m.ols_ridge = meta.at("ols_ridge").get<double>();
    m.n_components = meta.at("n_components").get<std::size_t>();
    m.prob_mode = meta.at("prob_feature_mode").get<std::string>() == "geometric_mean"
                      ? features::ProbFeatureMode::GeometricMean
                      : features::ProbFeatureMode::Product;
    m.raw_selection = meta.at("raw_selection").get<bool>();
    m.refit_stats = meta.at("refit_stats").get<bool>();
    m.refit_unfiltered = meta.at("refit_unfiltered").get<bool>();
    m.first_size = meta.at("first_size").get<std::size_t>();
    m.second_size = meta.at("second_size").get<std::size_t>();
    m.degenerate = meta.at("degenerate").get<bool>();
    m.warnings = meta.at("warnings").get<std::vector<std::string>>();
    m.config_checksum = meta.at("config_checksum").get<std::string>();
    if (!meta.at("huq_external_score").is_null()) m.huq_external_score = meta.at("huq_external_score").get<std::string>();
    if (!meta.at("train_size").is_null()) m.train_size = meta.at("train_size").get<std::size_t>();

    model.layer_stats = get_stats(t, "in", meta.at("layer_stats"));
    if (meta.contains("bg_stats")) model.bg_stats = get_stats(t, "bg", meta.at("bg_stats"));

    model.projector.feature_means = read_evec(t, "pca/means");
    model.projector.feature_stds = read_evec(t, "pca/stds");
    model.projector.components = read_mat(t, "pca/components");
    model.projector.explained_variance_ratio = read_evec(t, "pca/explained_variance_ratio");
    model.weights = read_evec(t, "regression/weights");
    const auto intercept = read_vec(t, "regression/intercept");
    if (intercept.size() != 1) throw DataError("regression intercept must hold one value");
    model.intercept = intercept[0];

    if (meta.contains("huq")) {
      const auto thr = read_vec(t, "huq/thresholds");
      if (thr.size() != 3) throw DataError("huq thresholds must hold three values");
      hybrid::HuqParams h;
      h.delta_min = thr[0];
      h.delta_max = thr[1];
      h.alpha = thr[2];
      h.ref_t2_u1 = read_vec(t, "huq/ref_t2_u1");
      h.ref_t2_u2 = read_vec(t, "huq/ref_t2_u2");
      h.ref_tid_u1 = read_vec(t, "huq/ref_tid_u1");
      h.degenerate = meta.at("huq").at("degenerate").get<bool>();
      model.huq = std::move(h);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model metadata: ") + e.what());
  }

  const std::size_t layers = model.layer_stats.size();
  if (layers == 0) throw DataError("model has no layer statistics");
  for (const auto& s : model.layer_stats) {
    if (s.dim() != model.layer_stats.front().dim()) throw DataError("inconsistent layer widths in model");
  }
  if (model.variant == features::Variant::RMD &&
      (!model.bg_stats || model.bg_stats->size() != layers ||
       model.bg_stats->front().dim() != model.layer_stats.front().dim())) {
    throw DataError("RMD model needs background statistics matching L and d");
  }
  const auto& p = model.projector;
  if (p.n_features() != layers || static_cast<std::size_t>(p.feature_means.size()) != layers ||
      static_cast<std::size_t>(p.feature_stds.size()) != layers) {
    throw DataError("projector does not match the layer count");
  }
  if (static_cast<std::size_t>(model.weights.size()) != p.n_components() + (model.use_prob_feature ? 1 : 0)) {
    throw DataError("regression weight count does not match the projector");
  }
  return model;
}

void save_model(const std::filesystem::path& path, const regress::UqModel& model) {
  store::write_file(path, encode_model(model));
}

regress::UqModel load_model(const std::filesystem::path& path) { return decode_model(store::read_file(path)); }

}  // namespace tmd::model_io
