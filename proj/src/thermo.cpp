#include "sorbfit/thermo.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sorbfit/error.hpp"

namespace sorbfit::thermo {

namespace {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

LineFit ols(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.intercept + f.slope * x[i]);
    ss_res += e * e;
  }
  f.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return f;
}

}  // namespace

double vant_hoff_K(double K0, double dH_kJ, double T) {
  return K0 * std::exp(-dH_kJ * 1000.0 / (iso::kGasConstant * T));
}

ThermoParams vant_hoff(const std::vector<std::pair<double, double>>& K_by_T) {
  std::set<double> temps;
  std::vector<double> x, y;
  for (const auto& [T, K] : K_by_T) {
    if (!(K > 0.0) || !std::isfinite(K)) throw Error(Errc::NonPositiveK, "affinity constant must be positive");
    if (!(T > 0.0)) throw Error(Errc::InvalidArgument, "temperature must be positive");
    temps.insert(T);
    x.push_back(1.0 / T);
    y.push_back(std::log(K));
  }
  if (temps.size() < 2) throw Error(Errc::SingleTemperature, "Van't Hoff analysis needs two or more temperatures");
  const auto f = ols(x, y);
  ThermoParams t;
  t.dH = -iso::kGasConstant * f.slope / 1000.0;
  t.dS = iso::kGasConstant * f.intercept;
  t.K0 = std::exp(f.intercept);
  t.n_temps = static_cast<int>(temps.size());
  t.two_point = K_by_T.size() == 2;
  t.r2_fit = t.two_point ? 1.0 : f.r2;
  for (double T : temps) t.dG_at[T] = t.dG(T);
  return t;
}

std::optional<double> invert_uptake(const TempModel& m, double uptake) {
  auto f = [&](double p) { return iso::eval_form_nothrow(m.form, m.params, p, m.temperature) - uptake; };
  double lo = kInvertLowBar, hi = kInvertHighBar;
  const double flo = f(lo), fhi = f(hi);
  if (std::isnan(flo) || std::isnan(fhi)) return std::nullopt;
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0.0) == (fhi > 0.0)) return std::nullopt;
  const bool increasing = flo < 0.0;
  for (int it = 0; it < 400 && (hi - lo) > 1e-10 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (std::isnan(fm)) return std::nullopt;
    if ((fm < 0.0) == increasing) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

IsostericCurve isosteric_heat(const std::vector<TempModel>& models, const std::vector<double>& levels) {
  std::set<double> temps;
  for (const auto& m : models) temps.insert(m.temperature);
  if (temps.size() < 2) throw Error(Errc::SingleTemperature, "isosteric heat needs two or more temperatures");
  IsostericCurve c;
  for (double q : levels) {
    std::vector<double> x, y;
    bool ok = true;
    for (const auto& m : models) {
      const auto p = invert_uptake(m, q);
      if (!p || !(*p > 0.0)) {
        ok = false;
        break;
      }
      x.push_back(1.0 / m.temperature);
      y.push_back(std::log(*p));
    }
    if (!ok) {
      c.omitted_levels.push_back(q);
      continue;
    }
    const auto f = ols(x, y);
    c.coverage_levels.push_back(q);
    c.q_st.push_back(-iso::kGasConstant * f.slope / 1000.0);
  }
  c.n_levels = c.coverage_levels.size();
  if (c.n_levels == 0) throw Error(Errc::NoInvertibleLevels, "no coverage level could be bracketed at every temperature");
  return c;
}

std::string_view to_string(GibbsClass c) noexcept {
  switch (c) {
    case GibbsClass::Strong: return "Strong";
    case GibbsClass::Moderate: return "Moderate";
    case GibbsClass::Weak: return "Weak";
    case GibbsClass::NotFavorable: return "NotFavorable";
  }
  return "NotFavorable";
}

GibbsClass classify_gibbs(double dG) {
  if (dG < -20.0) return GibbsClass::Strong;
  if (dG < -10.0) return GibbsClass::Moderate;
  if (dG < 0.0) return GibbsClass::Weak;
  return GibbsClass::NotFavorable;
}

nlohmann::json to_json(const ThermoParams& t) {
  nlohmann::json dg = nlohmann::json::array();
  for (const auto& [T, g] : t.dG_at)
    dg.push_back({{"T", T}, {"dG", g}, {"class", std::string(to_string(classify_gibbs(g)))}});
  return {{"dH_kJ_mol", t.dH}, {"dS_J_mol_K", t.dS}, {"K0", t.K0},         {"r2_fit", t.r2_fit},
          {"n_temps", t.n_temps}, {"two_point", t.two_point}, {"dG_at", dg}};
}

nlohmann::json to_json(const IsostericCurve& c) {
  return {{"coverage_levels", c.coverage_levels}, {"q_st_kJ_mol", c.q_st}, {"n_levels", c.n_levels},
          {"omitted_levels", c.omitted_levels}};
}

}  // namespace sorbfit::thermo
