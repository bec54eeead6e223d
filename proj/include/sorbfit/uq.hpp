#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "sorbfit/pinn.hpp"

namespace sorbfit::uq {

using pinn::Matrix;
using pinn::Vector;

struct MemberSpec {
  double width_mult = 1.0;
  int depth = 4;  // backbone layers: 3, 4 or 5
  double dropout = 0.10;
  double lr = 1.2e-3;  // phase-1 learning rate
  std::uint64_t seed = 42;

  bool operator==(const MemberSpec&) const = default;
};

struct EnsembleSpec {
  std::vector<MemberSpec> members;

  /// The ten-member architecture-diverse default.
  static EnsembleSpec standard();
  /// Same seeds, every member the base architecture; only seed and dropout
  /// masks differ.
  static EnsembleSpec seeds_only();
  /// Throws InvalidArgument unless >= 2 members with valid depths and rates.
  void validate() const;
};

/// Backbone widths for depth 3, 4, 5: [256,512,256], [256,512,256,128],
/// [256,512,512,256,128].
std::vector<int> backbone_for_depth(int depth);
pinn::ArchSpec arch_for(const MemberSpec& m, int input_dim);
pinn::TrainSchedule schedule_for(const MemberSpec& m, const pinn::TrainSchedule& base);

inline constexpr std::array<double, 3> kLevels{0.68, 0.95, 0.99};
double z_for(double level);  // two-sided normal quantile; z(0.95) = 1.959964

struct Ensemble {
  EnsembleSpec spec;
  std::vector<pinn::Network> members;
  double tau = 1.0;
};

/// Trains every member on its own worker (members never share state), so
/// the result is independent of the thread count.
std::vector<pinn::TrainResult> train_ensemble(Ensemble& e, int input_dim, const pinn::Dataset& train,
                                              const pinn::Dataset& val, const pinn::TrainSchedule& base,
                                              const QmaxTable& qmax = {});

struct Interval {
  Vector lo, hi;
};

struct EnsemblePrediction {
  Vector mean;
  Vector sigma_raw;  // population standard deviation over members
  Vector sigma_cal;  // tau * sigma_raw
  std::array<Interval, 3> intervals;  // kLevels, from sigma_cal
};

/// member_preds[k] holds member k's outputs. Throws TooFewMembers (< 2) or
/// LengthMismatch.
EnsemblePrediction aggregate(const std::vector<Vector>& member_preds, double tau = 1.0);
std::vector<Vector> member_predictions(const Ensemble& e, const Matrix& X, const Matrix& PT);
EnsemblePrediction predict_ensemble(const Ensemble& e, const Matrix& X, const Matrix& PT);

/// Fraction of rows with |y - mean| <= tau z sigma (inclusive).
double coverage(const Vector& mean, const Vector& sigma, const Vector& y, double tau, double level);

struct CalibrationResult {
  double tau = 1.0;
  std::array<double, 3> coverage_before{};
  std::array<double, 3> coverage_after{};
  bool reached = false;  // after-coverage at the target level within +-0.005
};

inline constexpr double kTauLow = 1e-3;
inline constexpr double kTauHigh = 1e3;
inline constexpr double kCoverageBand = 0.005;

/// Log-scale bisection on tau in [1e-3, 1e3]; the first probe is tau = 1.
/// Throws DegenerateSpread when sigma > 0 on fewer than half the rows, and
/// UnreachableTarget when even the widest intervals fall short.
CalibrationResult calibrate_temperature(const Vector& mean, const Vector& sigma, const Vector& y,
                                        double target = 0.95);

struct Diversity {
  double mean_correlation = 0.0;  // over member pairs
  double mean_sigma = 0.0;
};

/// Needs >= 2 members and >= 10 rows.
Diversity ensemble_diversity(const std::vector<Vector>& member_preds);

nlohmann::json to_json(const MemberSpec& m);
nlohmann::json to_json(const EnsembleSpec& s);
EnsembleSpec ensemble_spec_from_json(const nlohmann::json& j);  // strict
nlohmann::json to_json(const CalibrationResult& c);

}  // namespace sorbfit::uq
