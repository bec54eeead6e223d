#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace sorbfit::iso {

inline constexpr double kGasConstant = 8.314462618;  // J/(mol K)

enum class FormId {
  // classical
  Henry,
  Langmuir,
  Freundlich,
  BET,
  Temkin,
  Toth,
  Sips,
  RedlichPeterson,
  DubininRadushkevich,
  Hill,
  // mathematical
  Poly2,
  Poly3,
  Poly4,
  ExpSingle,
  ExpDouble,
  PowerStd,
  PowerMod,
  LogStd,
  LogMod,
  Hyperbolic,
  Rational,
  WeibullGrowth,
  Gompertz,
};

enum class Category { Classical, Mathematical };

struct ParamBound {
  double low = 0.0;
  double high = 0.0;
  /// Search in log space (positive range spanning several decades).
  bool log_scale = false;
};

struct FormInfo {
  FormId id;
  std::string_view name;
  Category category;
  /// Isotherm parameter count as conventionally tabulated. For BET this
  /// excludes the fitted pseudo-saturation pressure p0.
  int n_params;
  std::vector<std::string_view> param_names;  // every fitted value, in order
  /// Capacity parameter index (q_max / Q_s) when the form saturates.
  std::optional<std::size_t> capacity_index;
  /// Parameters that must be strictly positive for a physical fit.
  std::vector<std::size_t> positive_params;
};

const FormInfo& info(FormId id);
std::size_t n_fitted(FormId id);
std::string_view to_string(FormId id);
std::optional<FormId> parse_form(std::string_view name);

const std::vector<FormId>& all_forms();
/// The ten mechanistic forms (nine individual-fit models plus Hill).
const std::vector<FormId>& classical_forms();
/// Henry through Dubinin-Radushkevich: the individual-sample model set.
const std::vector<FormId>& individual_forms();
const std::vector<FormId>& mathematical_forms();

/// Polynomial forms evaluate in x = p / kPolyPressureScale.
inline constexpr double kPolyPressureScale = 100.0;

struct ParamVector {
  FormId form = FormId::Langmuir;
  std::vector<double> values;

  /// Named accessor; throws InvalidArgument for an unknown name.
  double get(std::string_view name) const;
};

struct BoundsContext {
  /// Largest observed pressure; anchors BET's p0 window (max_p, 10 max_p].
  double max_pressure = 200.0;
};

std::vector<ParamBound> param_bounds(FormId form, const BoundsContext& ctx = {});

/// Closed-form uptake (mmol/g) at pressure p (bar) and temperature T (K).
/// Throws DomainError outside the form's domain.
double eval_form(FormId form, std::span<const double> params, double p, double T);
inline double eval_form(const ParamVector& pv, double p, double T) { return eval_form(pv.form, pv.values, p, T); }

/// Same arithmetic as eval_form but reports domain failures as NaN; used in
/// optimizer inner loops.
double eval_form_nothrow(FormId form, std::span<const double> params, double p, double T) noexcept;

/// Affinity constant used for Van't Hoff analysis, when the form has one.
std::optional<double> affinity(FormId form, std::span<const double> params);

struct IsothermPoint {
  double pressure = 0.0;
  double temperature = 0.0;
  double uptake = 0.0;
};

inline constexpr double kPhysicsFlagThreshold = 0.7;

struct PhysicsScore {
  double score = 1.0;
  std::vector<std::string> violated_checks;

  bool flagged() const { return score < kPhysicsFlagThreshold; }
};

/// Five equally weighted checks: positivity, saturation, monotonicity,
/// Freundlich favorability, BET relative-pressure window. Checks that do not
/// apply to a form pass.
PhysicsScore validate_physics(FormId form, std::span<const double> params, std::span<const IsothermPoint> isotherm);

nlohmann::json registry_json();

}  // namespace sorbfit::iso
