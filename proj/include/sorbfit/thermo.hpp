#pragma once

#include <map>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sorbfit/isotherm_models.hpp"

namespace sorbfit::thermo {

struct ThermoParams {
  double dH = 0.0;   // kJ/mol
  double dS = 0.0;   // J/(mol K)
  double K0 = 0.0;   // pre-exponential factor, units of K
  double r2_fit = 0.0;
  int n_temps = 0;
  bool two_point = false;  // exactly two points: r2 = 1 by construction
  std::map<double, double> dG_at;  // T (K) -> kJ/mol

  /// dH - T dS in kJ/mol.
  double dG(double T) const { return dH - T * dS / 1000.0; }
};

/// OLS of ln K on 1/T. Throws NonPositiveK, SingleTemperature.
ThermoParams vant_hoff(const std::vector<std::pair<double, double>>& K_by_T);

/// K(T) = K0 exp(-dH / (R T)), dH in kJ/mol.
double vant_hoff_K(double K0, double dH_kJ, double T);

struct TempModel {
  double temperature = 0.0;
  iso::FormId form = iso::FormId::Langmuir;
  std::vector<double> params;
};

inline constexpr double kInvertLowBar = 1e-6;
inline constexpr double kInvertHighBar = 1e4;

/// Pressure at which the model reaches `uptake`, by bisection on
/// [1e-6, 1e4] bar to 1e-10 relative tolerance; nullopt when not bracketed.
std::optional<double> invert_uptake(const TempModel& m, double uptake);

struct IsostericCurve {
  std::vector<double> coverage_levels;  // mmol/g
  std::vector<double> q_st;             // kJ/mol
  std::size_t n_levels = 0;
  std::vector<double> omitted_levels;   // not bracketed at every temperature
};

/// Throws SingleTemperature (fewer than two distinct temperatures) and
/// NoInvertibleLevels.
IsostericCurve isosteric_heat(const std::vector<TempModel>& models, const std::vector<double>& coverage_levels);

enum class GibbsClass { Strong, Moderate, Weak, NotFavorable };
std::string_view to_string(GibbsClass c) noexcept;

/// Boundaries go to the weaker class: -20 -> Moderate, -10 -> Weak.
GibbsClass classify_gibbs(double dG_kJ);

nlohmann::json to_json(const ThermoParams& t);
nlohmann::json to_json(const IsostericCurve& c);

}  // namespace sorbfit::thermo
