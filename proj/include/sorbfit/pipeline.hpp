#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sorbfit/data_core.hpp"
#include "sorbfit/features.hpp"
#include "sorbfit/pinn.hpp"

namespace sorbfit::pipeline {

struct PipelineConfig {
  int select_k = 50;
  bool handle_outliers = true;
  std::uint64_t seed = 42;
};

/// Everything fitted on the training partition that turns integrated records
/// into network inputs: engineer -> impute -> scale -> select.
struct Pipeline {
  std::vector<std::string> minerals;
  features::FeatureCatalog catalog;
  features::FeatureContext context;
  features::Imputer imputer;
  features::ScalerParams scaler;
  features::SelectionResult selection;
  std::vector<std::string> inputs;  // model input order

  /// Scaled, selected inputs for isotherm records.
  features::FeatureMatrix transform(const std::vector<data::IntegratedRecord>& records) const;

  /// Network dataset; X_plus / X_minus re-engineer each row at p +- h (bar).
  /// With an outlier report (fitted on the same rows) excluded rows are
  /// dropped and clipped cells get no pressure derivative.
  pinn::Dataset dataset(const std::vector<data::IntegratedRecord>& records, double h = 1e-3,
                        const features::OutlierReport* outliers = nullptr) const;
};

struct FitResult {
  Pipeline pipeline;
  features::OutlierReport outliers;  // for the training rows, in record order
};

/// Throws InsufficientSamples when fewer than 50 training rows carry a target.
FitResult fit_pipeline(const std::vector<data::IntegratedRecord>& train, const PipelineConfig& cfg = {});

nlohmann::json to_json(const Pipeline& p);
Pipeline pipeline_from_json(const nlohmann::json& j);

/// Isotherm-bearing records whose sample falls in the given partition.
std::vector<data::IntegratedRecord> partition_records(const std::vector<data::IntegratedRecord>& records,
                                                      const data::SplitAssignment& split, data::Partition part);

}  // namespace sorbfit::pipeline
