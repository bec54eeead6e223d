#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sorbfit/data_core.hpp"

namespace sorbfit::eval {

struct PointMetrics {
  std::size_t n = 0;
  double r2 = 0.0;
  double adj_r2 = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> mape;   // percent, over non-zero targets
  std::size_t mape_skipped = 0; // zero targets left out of MAPE
  double max_error = 0.0;
  double explained_variance = 0.0;
  double mbe = 0.0;  // mean(yhat - y)
  double pearson = 0.0;
  double spearman = 0.0;
  double kendall = 0.0;
};

/// `n_predictors` enters the adjusted r2 only.
PointMetrics point_metrics(std::span<const double> y, std::span<const double> yhat, std::size_t n_predictors = 1);

struct PredictionRow {
  std::string sample_key;
  data::Lithology lithology = data::Lithology::Clay;
  double pressure = 0.0;
  double temperature = 0.0;
  double prediction = 0.0;
};

inline constexpr double kMonotonicSlack = 1e-6;
inline constexpr double kHighPressureBar = 50.0;
inline constexpr double kSaturationBandLow = 0.7;

struct PhysicsMetrics {
  double negative_rate = 0.0;
  double upper_violation_rate = 0.0;
  std::optional<double> monotonicity_score;      // absent without adjacent pairs
  std::optional<double> saturation_consistency;  // absent without rows above 50 bar
};

/// Monotonicity pairs are adjacent points of the same (sample, temperature)
/// after sorting by pressure.
PhysicsMetrics physics_metrics(std::span<const PredictionRow> rows, const QmaxTable& qmax = {});

struct IntervalSet {
  double nominal = 0.95;
  std::vector<double> lo;
  std::vector<double> hi;
};

inline constexpr double kCwcEta = 50.0;

struct UqMetrics {
  std::optional<double> coverage68;
  std::optional<double> coverage95;
  std::optional<double> coverage99;
  double calibration_error = 0.0;  // mean |coverage - nominal| over supplied levels
  double sharpness = 0.0;          // mean sigma
  double mpiw = 0.0;               // mean width of the 95% (else widest-level) intervals
  double cwc = 0.0;
  double unc_err_corr = 0.0;
};

/// Interval membership is inclusive at both ends.
double coverage(std::span<const double> y, std::span<const double> lo, std::span<const double> hi);

UqMetrics uq_metrics(std::span<const double> y, std::span<const double> mean, std::span<const double> sigma,
                     const std::vector<IntervalSet>& intervals);

/// sum (e_i - e_{i-1})^2 / sum e_i^2. Throws ZeroResidualVariance when every
/// residual is zero.
double durbin_watson(std::span<const double> residuals);

struct JarqueBera {
  double statistic = 0.0;
  double p_value = 1.0;
};
/// Throws ZeroResidualVariance for constant residuals.
JarqueBera jarque_bera(std::span<const double> residuals);

struct ResidualTests {
  double durbin_watson = 0.0;
  JarqueBera jarque_bera;
  double heteroscedasticity_rho = 0.0;  // Spearman(|e|, prediction)
  bool small_sample = false;            // n < 8: JB asymptotics unreliable
};

/// Residuals ordered by pressure. Throws ZeroResidualVariance when all
/// residuals are equal.
ResidualTests residual_tests(std::span<const double> residuals, std::span<const double> predictions);

struct MetricReport {
  PointMetrics point;
  PhysicsMetrics physics;
  std::optional<UqMetrics> uq;
  std::optional<ResidualTests> residual;
};

/// Keys are the MetricReport field names; absent metrics serialize as null.
nlohmann::json to_json(const MetricReport& r);

}  // namespace sorbfit::eval
