#include "sorbfit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sorbfit/error.hpp"

namespace sorbfit::pipeline {

namespace {

std::vector<data::IntegratedRecord> shifted(const std::vector<data::IntegratedRecord>& records, double dp) {
  std::vector<data::IntegratedRecord> out;
  for (const auto& r : records) {
    if (!r.has_isotherm()) continue;
    out.push_back(r);
    *out.back().pressure += dp;
  }
  return out;
}

std::vector<std::string> minerals_of(const std::vector<data::IntegratedRecord>& records) {
  std::set<std::string> m;
  for (const auto& r : records)
    if (r.properties)
      for (const auto& [name, _] : r.properties->mineral_fractions) m.insert(name);
  return {m.begin(), m.end()};
}

}  // namespace

features::FeatureMatrix Pipeline::transform(const std::vector<data::IntegratedRecord>& records) const {
  const auto raw = features::engineer_features(records, catalog, context);
  return scaler.transform(imputer.apply(raw)).select_columns(inputs);
}

pinn::Dataset Pipeline::dataset(const std::vector<data::IntegratedRecord>& records, double h,
                                const features::OutlierReport* outliers) const {
  if (!(h > 0.0)) throw Error(Errc::InvalidArgument, "pressure step must be positive");
  const auto raw = features::engineer_features(records, catalog, context);
  const auto raw_p = features::engineer_features(shifted(records, h), catalog, context);
  const auto raw_m = features::engineer_features(shifted(records, -h), catalog, context);
  auto imputed = imputer.apply(raw);

  std::vector<std::size_t> keep(imputed.rows());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
  features::FeatureMatrix cleaned = imputed;
  if (outliers) {
    cleaned = features::apply_outliers(imputed, *outliers);
    keep.clear();
    for (std::size_t i = 0; i < imputed.rows(); ++i)
      if (outliers->action[i] != features::OutlierAction::Exclude) keep.push_back(i);
  }
  const auto scaled = scaler.transform(cleaned).select_columns(inputs);

  const auto n = static_cast<Eigen::Index>(keep.size());
  const auto d = static_cast<Eigen::Index>(inputs.size());
  pinn::Dataset ds;
  ds.h = h;
  ds.X = scaled.values.transpose();
  ds.X_plus = ds.X;
  ds.X_minus = ds.X;
  ds.PT.resize(2, n);
  ds.y.resize(n);
  for (Eigen::Index c = 0; c < d; ++c) {
    const auto& name = inputs[static_cast<std::size_t>(c)];
    const auto raw_col = static_cast<Eigen::Index>(raw.column(name));
    const auto imp_col = static_cast<Eigen::Index>(imputed.column(name));
    const auto sc = static_cast<std::size_t>(std::find(scaler.names.begin(), scaler.names.end(), name) - scaler.names.begin());
    const double scale = scaler.constant[sc] ? 1.0 : scaler.iqr[sc];
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto i = static_cast<Eigen::Index>(keep[static_cast<std::size_t>(k)]);
      const double x0 = raw.values(i, raw_col);
      if (!std::isfinite(x0) || cleaned.values(k, imp_col) != x0) continue;  // imputed or clipped
      const double up = raw_p.values(i, raw_col), dn = raw_m.values(i, raw_col);
      if (std::isfinite(up)) ds.X_plus(c, k) += (up - x0) / scale;
      if (std::isfinite(dn)) ds.X_minus(c, k) += (dn - x0) / scale;
    }
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto i = keep[static_cast<std::size_t>(k)];
    ds.PT(0, k) = imputed.pressure[i];
    ds.PT(1, k) = imputed.temperature[i];
    ds.y[k] = imputed.target[i];
    ds.lithology.push_back(imputed.lithology[i]);
  }
  ds.PT_plus = ds.PT;
  ds.PT_minus = ds.PT;
  ds.PT_plus.row(0).array() += h;
  ds.PT_minus.row(0).array() -= h;
  return ds;
}

FitResult fit_pipeline(const std::vector<data::IntegratedRecord>& train, const PipelineConfig& cfg) {
  FitResult out;
  Pipeline& p = out.pipeline;
  p.minerals = minerals_of(train);
  p.catalog = features::build_catalog(p.minerals);
  std::vector<data::IsothermRecord> iso;
  for (const auto& r : train)
    if (r.has_isotherm()) iso.push_back({r.sample_key, r.lithology, *r.pressure, *r.temperature, *r.uptake});
  p.context = features::estimate_context(iso, cfg.seed);

  const auto raw = features::engineer_features(train, p.catalog, p.context);
  p.imputer = features::fit_imputer(raw);
  auto m = p.imputer.apply(raw);
  if (cfg.handle_outliers) {
    out.outliers = features::detect_outliers(m, cfg.seed);
  } else {
    out.outliers.action.assign(m.rows(), features::OutlierAction::Keep);
    out.outliers.univariate.assign(m.rows(), false);
    out.outliers.multivariate.assign(m.rows(), false);
    out.outliers.isolation_score.assign(m.rows(), 0.0);
  }
  m = features::apply_outliers(m, out.outliers);
  p.scaler = features::fit_scaler(m);
  p.selection = features::select_features(p.scaler.transform(m), cfg.select_k, cfg.seed);
  p.inputs = p.selection.selected;
  if (p.inputs.empty()) throw Error(Errc::InsufficientData, "feature selection kept no columns");
  return out;
}

nlohmann::json to_json(const Pipeline& p) {
  return {{"format", "sorbfit-pipeline-1"},
          {"minerals", p.minerals},
          {"context", features::to_json(p.context)},
          {"imputer", features::to_json(p.imputer)},
          {"scaler", features::to_json(p.scaler)},
          {"selection", features::to_json(p.selection)},
          {"inputs", p.inputs}};
}

Pipeline pipeline_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "sorbfit-pipeline-1") throw Error(Errc::ParseError, "unknown pipeline format");
    Pipeline p;
    p.minerals = j.at("minerals").get<std::vector<std::string>>();
    p.catalog = features::build_catalog(p.minerals);
    p.context = features::context_from_json(j.at("context"));
    p.imputer = features::imputer_from_json(j.at("imputer"));
    p.scaler = features::scaler_from_json(j.at("scaler"));
    p.inputs = j.at("inputs").get<std::vector<std::string>>();
    const auto& s = j.at("selection");
    p.selection.selected = s.at("selected").get<std::vector<std::string>>();
    for (const auto& f : s.at("features")) {
      p.selection.names.push_back(f.at("name").get<std::string>());
      p.selection.votes.push_back(f.at("votes").get<int>());
      for (std::size_t k = 0; k < 4; ++k)
        p.selection.rank[k].push_back(f.at(std::string("rank_") + features::kSelectionMethods[k]).get<int>());
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("pipeline: ") + e.what());
  }
}

std::vector<data::IntegratedRecord> partition_records(const std::vector<data::IntegratedRecord>& records,
                                                      const data::SplitAssignment& split, data::Partition part) {
  std::vector<data::IntegratedRecord> out;
  for (const auto& r : records) {
    if (!r.has_isotherm()) continue;
    const auto it = split.partition.find(r.sample_key);
    if (it != split.partition.end() && it->second == part) out.push_back(r);
  }
  return out;
}

}  // namespace sorbfit::pipeline
