#include "sorbfit/isotherm_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "sorbfit/error.hpp"

namespace sorbfit::iso {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<FormInfo> build_registry() {
  using C = Category;
  return {
      {FormId::Henry, "Henry", C::Classical, 1, {"K_H"}, std::nullopt, {0}},
      {FormId::Langmuir, "Langmuir", C::Classical, 2, {"q_max", "K_L"}, 0, {0, 1}},
      {FormId::Freundlich, "Freundlich", C::Classical, 2, {"K_F", "n"}, std::nullopt, {0, 1}},
      {FormId::BET, "BET", C::Classical, 2, {"Q_m", "C", "p_0"}, std::nullopt, {0, 1, 2}},
      {FormId::Temkin, "Temkin", C::Classical, 2, {"b_T", "K_T"}, std::nullopt, {0, 1}},
      {FormId::Toth, "Toth", C::Classical, 3, {"q_max", "b", "t"}, 0, {0, 1, 2}},
      {FormId::Sips, "Sips", C::Classical, 3, {"q_max", "K_S", "n_s"}, 0, {0, 1, 2}},
      {FormId::RedlichPeterson, "RedlichPeterson", C::Classical, 3, {"K_RP", "A_RP", "beta"}, std::nullopt, {0, 1, 2}},
      {FormId::DubininRadushkevich, "DubininRadushkevich", C::Classical, 2, {"Q_s", "B"}, 0, {0, 1}},
      {FormId::Hill, "Hill", C::Classical, 3, {"q_max", "K", "n"}, 0, {0, 1, 2}},
      {FormId::Poly2, "Poly2", C::Mathematical, 3, {"a0", "a1", "a2"}, std::nullopt, {}},
      {FormId::Poly3, "Poly3", C::Mathematical, 4, {"a0", "a1", "a2", "a3"}, std::nullopt, {}},
      {FormId::Poly4, "Poly4", C::Mathematical, 5, {"a0", "a1", "a2", "a3", "a4"}, std::nullopt, {}},
      {FormId::ExpSingle, "ExpSingle", C::Mathematical, 2, {"a", "b"}, std::nullopt, {0, 1}},
      {FormId::ExpDouble, "ExpDouble", C::Mathematical, 4, {"a", "b", "c", "d"}, std::nullopt, {0, 1, 2, 3}},
      {FormId::PowerStd, "PowerStd", C::Mathematical, 2, {"a", "b"}, std::nullopt, {0, 1}},
      {FormId::PowerMod, "PowerMod", C::Mathematical, 3, {"a", "b", "c"}, std::nullopt, {0, 1}},
      {FormId::LogStd, "LogStd", C::Mathematical, 2, {"a", "b"}, std::nullopt, {}},
      {FormId::LogMod, "LogMod", C::Mathematical, 3, {"a", "b", "c"}, std::nullopt, {2}},
      {FormId::Hyperbolic, "Hyperbolic", C::Mathematical, 2, {"a", "b"}, std::nullopt, {0, 1}},
      {FormId::Rational, "Rational", C::Mathematical, 3, {"a", "b", "c"}, std::nullopt, {}},
      {FormId::WeibullGrowth, "WeibullGrowth", C::Mathematical, 3, {"a", "b", "c"}, std::nullopt, {0, 1, 2}},
      {FormId::Gompertz, "Gompertz", C::Mathematical, 3, {"a", "b", "c"}, std::nullopt, {0, 1, 2}},
  };
}

const std::vector<FormInfo>& registry() {
  static const std::vector<FormInfo> reg = build_registry();
  return reg;
}

using LD = long double;

}  // namespace

const FormInfo& info(FormId id) { return registry().at(static_cast<std::size_t>(id)); }

std::size_t n_fitted(FormId id) { return info(id).param_names.size(); }

std::string_view to_string(FormId id) { return info(id).name; }

std::optional<FormId> parse_form(std::string_view name) {
  std::string lowered(name);
  for (auto& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (const auto& f : registry()) {
    std::string n(f.name);
    for (auto& c : n) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (n == lowered) return f.id;
  }
  return std::nullopt;
}

const std::vector<FormId>& all_forms() {
  static const std::vector<FormId> v = [] {
    std::vector<FormId> out;
    for (const auto& f : registry()) out.push_back(f.id);
    return out;
  }();
  return v;
}

const std::vector<FormId>& classical_forms() {
  static const std::vector<FormId> v = [] {
    std::vector<FormId> out;
    for (const auto& f : registry())
      if (f.category == Category::Classical) out.push_back(f.id);
    return out;
  }();
  return v;
}

const std::vector<FormId>& individual_forms() {
  static const std::vector<FormId> v{FormId::Henry,  FormId::Langmuir, FormId::Freundlich,
                                     FormId::BET,    FormId::Temkin,   FormId::Toth,
                                     FormId::Sips,   FormId::RedlichPeterson, FormId::DubininRadushkevich};
  return v;
}

const std::vector<FormId>& mathematical_forms() {
  static const std::vector<FormId> v = [] {
    std::vector<FormId> out;
    for (const auto& f : registry())
      if (f.category == Category::Mathematical) out.push_back(f.id);
    return out;
  }();
  return v;
}

double ParamVector::get(std::string_view name) const {
  const auto& names = info(form).param_names;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name && i < values.size()) return values[i];
  throw Error(Errc::InvalidArgument, "form " + std::string(to_string(form)) + " has no parameter '" +
                                         std::string(name) + "'");
}

std::vector<ParamBound> param_bounds(FormId form, const BoundsContext& ctx) {
  const ParamBound capacity{0.001, 100.0, true};
  const ParamBound affinity_b{1e-6, 100.0, true};
  const ParamBound coeff{-10.0, 10.0, false};
  switch (form) {
    case FormId::Henry: return {affinity_b};
    case FormId::Langmuir: return {capacity, affinity_b};
    case FormId::Freundlich: return {affinity_b, {0.1, 10.0, true}};
    case FormId::BET: {
      const double pmax = std::max(ctx.max_pressure, 1e-3);
      return {capacity, {1e-3, 1e4, true}, {pmax * (1.0 + 1e-9), 10.0 * pmax, false}};
    }
    case FormId::Temkin: return {{1.0, 1e7, true}, affinity_b};
    case FormId::Toth: return {capacity, {1e-4, 1e6, true}, {0.01, 1.0, false}};
    case FormId::Sips: return {capacity, affinity_b, {0.05, 3.0, false}};
    case FormId::RedlichPeterson: return {{1e-8, 1e3, true}, affinity_b, {0.01, 1.0, false}};
    case FormId::DubininRadushkevich: return {capacity, {1e-12, 1e-3, true}};
    case FormId::Hill: return {capacity, {1e-3, 1e4, true}, {0.1, 5.0, false}};
    case FormId::Poly2: return {coeff, coeff, coeff};
    case FormId::Poly3: return {coeff, coeff, coeff, coeff};
    case FormId::Poly4: return {coeff, coeff, coeff, coeff, coeff};
    case FormId::ExpSingle: return {capacity, {1e-6, 10.0, true}};
    case FormId::ExpDouble: return {capacity, {1e-6, 10.0, true}, capacity, {1e-6, 10.0, true}};
    case FormId::PowerStd: return {{1e-6, 100.0, true}, {1e-3, 3.0, false}};
    case FormId::PowerMod: return {{1e-6, 100.0, true}, {1e-3, 3.0, false}, coeff};
    case FormId::LogStd: return {coeff, coeff};
    case FormId::LogMod: return {coeff, coeff, {1e-6, 1e3, true}};
    case FormId::Hyperbolic: return {capacity, {1e-6, 1e4, true}};
    case FormId::Rational: return {coeff, coeff, {0.0, 100.0, false}};
    case FormId::WeibullGrowth: return {capacity, {1e-3, 1e4, true}, {0.05, 5.0, false}};
    case FormId::Gompertz: return {capacity, {1e-6, 100.0, true}, {1e-6, 10.0, true}};
  }
  return {};
}

double eval_form_nothrow(FormId form, std::span<const double> k, double p_in, double T_in) noexcept {
  if (k.size() != n_fitted(form) || !(p_in >= 0.0)) return kNaN;
  const LD p = p_in;
  const LD T = T_in;
  const LD R = kGasConstant;
  LD q = 0;
  switch (form) {
    case FormId::Henry: q = k[0] * p; break;
    case FormId::Langmuir: {
      const LD kp = LD(k[1]) * p;
      q = k[0] * kp / (1 + kp);
      break;
    }
    case FormId::Freundlich:
      q = p == 0 ? 0 : LD(k[0]) * std::pow(p, 1 / LD(k[1]));
      break;
    case FormId::BET: {
      const LD x = p / LD(k[2]);
      if (!(x < 1)) return kNaN;
      q = LD(k[0]) * k[1] * x / ((1 - x) * (1 + (LD(k[1]) - 1) * x));
      break;
    }
    case FormId::Temkin: {
      const LD kp = LD(k[1]) * p;
      if (!(kp > 0) || !(T > 0)) return kNaN;
      q = R * T / LD(k[0]) * std::log(kp);
      break;
    }
    case FormId::Toth: {
      const LD t = k[2];
      q = LD(k[0]) * p / std::pow(LD(k[1]) + std::pow(p, t), 1 / t);
      break;
    }
    case FormId::Sips: {
      const LD u = std::pow(LD(k[1]) * p, 1 / LD(k[2]));
      q = LD(k[0]) * u / (1 + u);
      break;
    }
    case FormId::RedlichPeterson:
      q = LD(k[0]) * p / (1 + LD(k[1]) * std::pow(p, LD(k[2])));
      break;
    case FormId::DubininRadushkevich: {
      if (p == 0) {
        q = 0;  // removable singularity: epsilon -> infinity
        break;
      }
      if (!(T > 0)) return kNaN;
      const LD eps = R * T * std::log1p(1 / p);
      q = LD(k[0]) * std::exp(-LD(k[1]) * eps * eps);
      break;
    }
    case FormId::Hill:
      q = p == 0 ? 0 : LD(k[0]) / (1 + std::pow(LD(k[1]) / p, LD(k[2])));
      break;
    case FormId::Poly2:
    case FormId::Poly3:
    case FormId::Poly4: {
      const LD x = p / LD(kPolyPressureScale);
      LD acc = 0;
      for (std::size_t i = k.size(); i-- > 0;) acc = acc * x + k[i];
      q = acc;
      break;
    }
    case FormId::ExpSingle: q = -LD(k[0]) * std::expm1(-LD(k[1]) * p); break;
    case FormId::ExpDouble:
      q = -LD(k[0]) * std::expm1(-LD(k[1]) * p) - LD(k[2]) * std::expm1(-LD(k[3]) * p);
      break;
    case FormId::PowerStd: q = p == 0 ? 0 : LD(k[0]) * std::pow(p, LD(k[1])); break;
    case FormId::PowerMod: q = (p == 0 ? 0 : LD(k[0]) * std::pow(p, LD(k[1]))) + k[2]; break;
    case FormId::LogStd:
      if (!(p > 0)) return kNaN;
      q = LD(k[0]) * std::log(p) + k[1];
      break;
    case FormId::LogMod: {
      const LD arg = p + LD(k[2]);
      if (!(arg > 0)) return kNaN;
      q = LD(k[0]) * std::log(arg) + k[1];
      break;
    }
    case FormId::Hyperbolic: q = LD(k[0]) * p / (LD(k[1]) + p); break;
    case FormId::Rational: {
      const LD den = 1 + LD(k[2]) * p;
      if (den == 0) return kNaN;
      q = (LD(k[0]) + LD(k[1]) * p) / den;
      break;
    }
    case FormId::WeibullGrowth:
      q = -LD(k[0]) * std::expm1(-std::pow(p / LD(k[1]), LD(k[2])));
      break;
    case FormId::Gompertz: q = LD(k[0]) * std::exp(-LD(k[1]) * std::exp(-LD(k[2]) * p)); break;
  }
  const auto out = static_cast<double>(q);
  return std::isfinite(out) ? out : kNaN;
}

double eval_form(FormId form, std::span<const double> params, double p, double T) {
  if (params.size() != n_fitted(form)) {
    throw Error(Errc::InvalidArgument, std::string(to_string(form)) + " expects " + std::to_string(n_fitted(form)) +
                                           " parameters");
  }
  if (!(p >= 0.0)) throw Error(Errc::DomainError, "negative pressure");
  for (double v : params)
    if (!std::isfinite(v)) throw Error(Errc::DomainError, "non-finite parameter");
  const double q = eval_form_nothrow(form, params, p, T);
  if (std::isnan(q)) {
    throw Error(Errc::DomainError, std::string(to_string(form)) + " undefined at p=" + std::to_string(p) +
                                       " T=" + std::to_string(T));
  }
  return q;
}

std::optional<double> affinity(FormId form, std::span<const double> k) {
  switch (form) {
    case FormId::Henry: return k[0];
    case FormId::Langmuir: return k[1];
    case FormId::Freundlich: return k[0];
    case FormId::Temkin: return k[1];
    case FormId::Toth: return std::pow(k[1], -1.0 / k[2]);
    case FormId::Sips: return k[1];
    case FormId::RedlichPeterson: return k[1];
    case FormId::Hill: return 1.0 / k[1];
    default: return std::nullopt;
  }
}

PhysicsScore validate_physics(FormId form, std::span<const double> params, std::span<const IsothermPoint> data) {
  constexpr int kChecks = 5;
  PhysicsScore out;
  const auto& fi = info(form);

  bool positive = true;
  for (std::size_t i : fi.positive_params)
    if (!(params[i] > 0.0)) positive = false;
  for (const auto& pt : data) {
    const double q = eval_form_nothrow(form, params, pt.pressure, pt.temperature);
    if (!(q >= -1e-12)) positive = false;
  }
  if (!positive) out.violated_checks.emplace_back("positivity");

  if (fi.capacity_index) {
    double qobs = 0.0;
    for (const auto& pt : data) qobs = std::max(qobs, pt.uptake);
    if (params[*fi.capacity_index] < qobs) out.violated_checks.emplace_back("saturation");
  }

  if (!data.empty()) {
    double pmin = data[0].pressure, pmax = data[0].pressure;
    std::vector<double> temps;
    for (const auto& pt : data) {
      pmin = std::min(pmin, pt.pressure);
      pmax = std::max(pmax, pt.pressure);
      if (std::find(temps.begin(), temps.end(), pt.temperature) == temps.end()) temps.push_back(pt.temperature);
    }
    bool monotone = true;
    constexpr int kGrid = 200;
    for (double T : temps) {
      double prev = -std::numeric_limits<double>::infinity();
      for (int g = 0; g <= kGrid && monotone; ++g) {
        const double p = pmin + (pmax - pmin) * g / kGrid;
        const double q = eval_form_nothrow(form, params, p, T);
        if (std::isnan(q)) continue;  // outside domain; positivity already judges data points
        if (q < prev - 1e-12 * std::max(1.0, std::abs(prev))) monotone = false;
        prev = q;
      }
    }
    if (!monotone) out.violated_checks.emplace_back("monotonicity");
  }

  if (form == FormId::Freundlich && !(params[1] > 1.0)) out.violated_checks.emplace_back("favorability");

  if (form == FormId::BET) {
    bool inside = !data.empty();
    for (const auto& pt : data) {
      const double x = pt.pressure / params[2];
      if (!(x > 0.05 && x < 0.35)) inside = false;
    }
    if (!inside) out.violated_checks.emplace_back("bet_window");
  }

  out.score = 1.0 - static_cast<double>(out.violated_checks.size()) / kChecks;
  return out;
}

nlohmann::json registry_json() {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : registry()) {
    nlohmann::json j;
    j["id"] = f.name;
    j["category"] = f.category == Category::Classical ? "classical" : "mathematical";
    j["n_params"] = f.n_params;
    j["param_names"] = nlohmann::json::array();
    for (auto n : f.param_names) j["param_names"].push_back(std::string(n));
    j["bounds"] = nlohmann::json::array();
    for (const auto& b : param_bounds(f.id)) j["bounds"].push_back({b.low, b.high});
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace sorbfit::iso
