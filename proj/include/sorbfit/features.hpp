#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sorbfit/data_core.hpp"

namespace sorbfit::features {

inline constexpr double kCriticalTemperature = 33.19;  // K, hydrogen
inline constexpr double kCriticalPressure = 13.13;     // bar, hydrogen
inline constexpr double kH2Diameter = 0.289;           // nm
inline constexpr double kPressureFloor = 1e-6;         // bar, for ln p and T/p
inline constexpr double kKeffFloor = 1e-12;

enum class Category { Thermodynamic, PoreStructure, SurfaceChemistry, Interaction, Kinetic, Sieving, ClassicalInspired };
std::string_view to_string(Category c) noexcept;

struct CatalogEntry {
  std::string name;
  Category category;
  std::string formula;  // human-readable definition
  std::vector<std::string> inputs;
  bool uses_target = false;  // derived from the measured uptake; never a model input
};

struct FeatureCatalog {
  std::vector<CatalogEntry> entries;

  std::size_t index_of(const std::string& name) const;  // throws InvalidArgument
};

/// Named-formula catalog plus measured property columns. One mineral_<name>
/// column per mineral in `minerals`.
FeatureCatalog build_catalog(const std::vector<std::string>& minerals, bool include_target_derived = false);

/// Freundlich exponent 1/n per lithology for the p^(1/n) basis feature.
struct FeatureContext {
  std::array<double, 3> freundlich_exponent{0.5, 0.5, 0.5};
};

/// Fits Freundlich to each lithology's pooled isotherm points and returns
/// 1/n; lithologies without points keep 0.5.
FeatureContext estimate_context(const std::vector<data::IsothermRecord>& records, std::uint64_t seed = 42);

using Matrix = Eigen::MatrixXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct FeatureMatrix {
  std::vector<std::string> names;
  std::vector<Category> categories;
  Matrix values;  // NaN marks a missing cell
  Mask imputed;
  std::vector<std::string> sample_keys;
  std::vector<data::Lithology> lithology;
  std::vector<double> pressure;
  std::vector<double> temperature;
  std::vector<double> target;  // NaN when the record carries no uptake

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
  std::size_t column(const std::string& name) const;  // throws InvalidArgument
  FeatureMatrix select_rows(const std::vector<std::size_t>& rows) const;
  FeatureMatrix select_columns(const std::vector<std::string>& names) const;
};

/// One feature row; missing inputs give NaN. Throws MissingThermoInputs when
/// pressure or temperature is absent.
std::vector<double> engineer_row(const data::IntegratedRecord& rec, const FeatureCatalog& catalog,
                                 const FeatureContext& ctx = {});

/// Isotherm records only (property-only records are skipped).
FeatureMatrix engineer_features(const std::vector<data::IntegratedRecord>& records, const FeatureCatalog& catalog,
                                const FeatureContext& ctx = {});

enum class ImputeTier { None, Knn, LithologyMedian };

struct Imputer {
  static constexpr int k = 5;
  std::vector<std::string> names;          // columns kept
  std::vector<std::string> dropped;        // entirely missing in the fitting data
  std::vector<ImputeTier> tier;
  std::vector<std::array<double, 3>> lith_median;  // per lithology; 0 when a lithology never reports the column
  std::vector<std::size_t> distance_columns;       // thermodynamic columns (indices into names)
  std::vector<double> distance_center, distance_scale;
  Matrix reference;  // fitting rows for kNN, in kept-column order

  /// Drops `dropped` columns and fills every missing cell; observed cells are
  /// untouched and `imputed` marks the filled ones.
  FeatureMatrix apply(const FeatureMatrix& m) const;
};

/// Tiers by missing fraction in `train`: < 10% kNN (k = 5, Euclidean on
/// robust-scaled thermodynamic columns), otherwise per-lithology median.
Imputer fit_imputer(const FeatureMatrix& train);

enum class OutlierAction { Keep, Winsorize, Exclude };

struct OutlierReport {
  std::vector<bool> univariate;
  std::vector<bool> multivariate;
  std::vector<double> isolation_score;
  std::vector<OutlierAction> action;
  std::vector<double> p01, p99;  // per column clip range
};

inline constexpr double kContamination = 0.05;
inline constexpr double kFenceMultiplier = 3.0;

OutlierReport detect_outliers(const FeatureMatrix& m, std::uint64_t seed = 42);

/// Isolation-forest anomaly scores 2^(-E[h]/c(psi)): 100 trees, subsample
/// min(256, n).
std::vector<double> isolation_scores(const Matrix& X, std::uint64_t seed, int n_trees = 100);

/// Drops Exclude rows; clips flagged columns of Winsorize rows to [P1, P99]
/// (every column for rows flagged only by the isolation forest).
FeatureMatrix apply_outliers(const FeatureMatrix& m, const OutlierReport& r);

struct ScalerParams {
  std::vector<std::string> names;
  std::vector<double> median;
  std::vector<double> iqr;
  std::vector<bool> constant;  // IQR == 0: centered only

  FeatureMatrix transform(const FeatureMatrix& m) const;
  FeatureMatrix inverse(const FeatureMatrix& m) const;
};

ScalerParams fit_scaler(const FeatureMatrix& m);

struct SelectionResult {
  std::vector<std::string> selected;
  std::vector<std::string> names;  // every candidate, matrix order
  std::vector<int> votes;
  std::array<std::vector<int>, 4> rank;  // 1-based; pearson, mutual_info, forest, f_statistic
};

inline constexpr std::array<const char*, 4> kSelectionMethods{"pearson", "mutual_info", "forest", "f_statistic"};

/// Needs at least 50 rows with a target.
SelectionResult select_features(const FeatureMatrix& m, int k = 50, std::uint64_t seed = 42);

/// 16-bin equal-frequency mutual information (nats).
double mutual_information(const std::vector<double>& x, const std::vector<double>& y, int bins = 16);

nlohmann::json to_json(const FeatureCatalog& c);
nlohmann::json to_json(const Imputer& imp);
Imputer imputer_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ScalerParams& s);
ScalerParams scaler_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SelectionResult& s);
nlohmann::json to_json(const FeatureContext& c);
FeatureContext context_from_json(const nlohmann::json& j);

/// values as CSV with key, lithology, pressure, temperature, target columns.
std::string to_csv(const FeatureMatrix& m);
FeatureMatrix matrix_from_csv(std::string_view text);

}  // namespace sorbfit::features
