#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sorbfit/isotherm_models.hpp"

namespace sorbfit::fit {

struct DEConfig {
  int population = 0;  // 0: max(15, 10 * n_params)
  int max_generations = 300;
  double F = 0.8;
  double CR = 0.9;
  std::uint64_t seed = 42;
  double tol = 1e-10;        // relative best-cost improvement counted as progress
  int stagnation_window = 30;
};

struct DEResult {
  std::vector<double> best;
  double best_cost = 0.0;
  int generations = 0;
  bool converged = false;       // stopped on stagnation rather than the generation cap
  std::vector<double> history;  // best cost after each generation
};

using Objective = std::function<double(std::span<const double>)>;

/// rand/1/bin over the box; log-scaled bounds are searched in log space.
/// Non-finite costs count as +inf.
DEResult differential_evolution(const Objective& objective, const std::vector<iso::ParamBound>& bounds,
                                const DEConfig& config);

struct InfoCriteria {
  double aic = 0.0;
  double bic = 0.0;
  std::optional<double> aicc;  // absent when n <= k + 1
};

/// rss floored at 1e-30.
InfoCriteria information_criteria(double rss, std::size_t n, std::size_t k);

/// Relative measurement resolution below which RSS differences are treated as
/// noise when ranking fits: rss is floored at n * (kRssResolution * max|q|)^2.
inline constexpr double kRssResolution = 1e-6;

struct FittedModel {
  iso::FormId form = iso::FormId::Langmuir;
  iso::ParamVector params;
  double rss = 0.0;
  double r2 = 0.0;
  double rmse = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  std::optional<double> aicc;
  iso::PhysicsScore physics;
  std::size_t n_points = 0;
  int generations = 0;
  bool converged = false;
};

struct FitOptions {
  DEConfig de;
};

using Points = std::span<const iso::IsothermPoint>;

FittedModel fit_sample(Points isotherm, iso::FormId form, const FitOptions& opts = {});

/// Evaluate a fitted model's statistics on given data without refitting.
FittedModel score_params(Points isotherm, iso::FormId form, std::span<const double> params);

/// Ranked copy: physics-compliant fits first, then AIC ascending, physics
/// score descending, fewer parameters.
std::vector<FittedModel> select_best_model(const std::vector<FittedModel>& fits);

struct ParamCIs {
  std::vector<double> estimate;
  std::vector<double> lo;  // 2.5th percentile
  std::vector<double> hi;  // 97.5th percentile
  int n_boot = 0;
  int n_success = 0;
  std::uint64_t seed = 0;
  bool too_many_failures = false;  // fewer than 80% of refits succeeded
};

ParamCIs bootstrap_ci(Points isotherm, iso::FormId form, int n_boot = 500, std::uint64_t seed = 42,
                      const FitOptions& opts = {});

struct CVStats {
  int k = 0;
  double mean_r2 = 0.0;
  double std_r2 = 0.0;
  double mean_rmse = 0.0;
  double std_rmse = 0.0;
  double pooled_r2 = 0.0;  // r2 of all out-of-fold predictions together

  bool negative() const { return mean_r2 < 0.0; }
};

/// Round-robin folds over a seeded shuffle. Fold r2 = 1 - MSE_fold / Var(all
/// uptakes), so single-point folds (leave-one-out) are scored too.
CVStats kfold_cv(Points isotherm, iso::FormId form, int k = 5, std::uint64_t seed = 42, const FitOptions& opts = {});

/// Assign n points to k folds: shuffled indices dealt round-robin.
std::vector<int> fold_labels(std::size_t n, int k, std::uint64_t seed);

inline constexpr std::array<double, 5> kBiasBinEdges{10.0, 25.0, 50.0, 100.0, 200.0};
inline constexpr std::array<const char*, 6> kBiasBinLabels{"<10", "10-25", "25-50", "50-100", "100-200", ">200"};

struct AggregatedCell {
  std::string group;
  iso::FormId form = iso::FormId::Langmuir;
  bool ok = false;
  std::string error;
  std::size_t n_points = 0;
  std::vector<double> params;
  double train_r2 = 0.0;
  CVStats cv;
  double r2_ci_lo = 0.0;
  double r2_ci_hi = 0.0;
  std::optional<double> durbin_watson;
  std::array<std::optional<double>, 6> bias;  // mean(prediction - observed) per pressure bin
};

struct AggregatedReport {
  std::vector<AggregatedCell> cells;

  /// Highest training r2 among successful cells of a group.
  std::optional<double> best_r2(const std::string& group) const;
};

struct Group {
  std::string name;
  std::vector<iso::IsothermPoint> points;
};

struct AggregateOptions {
  FitOptions fit;
  int cv_folds = 5;
  int r2_boot = 1000;
  std::uint64_t seed = 42;
};

AggregatedReport fit_aggregated(const std::vector<Group>& groups, const std::vector<iso::FormId>& forms,
                                const AggregateOptions& opts = {});

nlohmann::json to_json(const FittedModel& m);
FittedModel fitted_model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ParamCIs& c);
nlohmann::json to_json(const CVStats& c);
nlohmann::json to_json(const AggregatedReport& r);

}  // namespace sorbfit::fit
