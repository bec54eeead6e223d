#include "sorbfit/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "sorbfit/error.hpp"
#include "sorbfit/stats.hpp"

namespace sorbfit::eval {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw Error(Errc::LengthMismatch, "length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  if (a == 0) throw Error(Errc::EmptyInput, "no rows to evaluate");
}

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

PointMetrics point_metrics(std::span<const double> y, std::span<const double> yhat, std::size_t n_predictors) {
  check_lengths(y.size(), yhat.size());
  PointMetrics m;
  m.n = y.size();
  const auto n = static_cast<double>(m.n);
  const double ybar = stats::mean(y);
  double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0, bias = 0.0, ape = 0.0;
  std::size_t ape_n = 0;
  std::vector<double> resid(m.n);
  for (std::size_t i = 0; i < m.n; ++i) {
    const double e = yhat[i] - y[i];
    resid[i] = e;
    ss_res += e * e;
    ss_tot += (y[i] - ybar) * (y[i] - ybar);
    abs_sum += std::abs(e);
    bias += e;
    m.max_error = std::max(m.max_error, std::abs(e));
    if (y[i] != 0.0) {
      ape += std::abs(e / y[i]);
      ++ape_n;
    }
  }
  m.mse = ss_res / n;
  m.rmse = std::sqrt(m.mse);
  m.mae = abs_sum / n;
  m.mbe = bias / n;
  m.mape_skipped = m.n - ape_n;
  if (ape_n > 0) m.mape = 100.0 * ape / static_cast<double>(ape_n);
  m.r2 = stats::r2_score(y, yhat);
  const double dof = n - static_cast<double>(n_predictors) - 1.0;
  m.adj_r2 = dof > 0 ? 1.0 - (1.0 - m.r2) * (n - 1.0) / dof : m.r2;
  const double var_y = stats::variance(y);
  m.explained_variance = var_y > 0 ? 1.0 - stats::variance(resid) / var_y : (stats::variance(resid) == 0 ? 1.0 : 0.0);
  m.pearson = stats::pearson(y, yhat);
  m.spearman = stats::spearman(y, yhat);
  m.kendall = stats::kendall(y, yhat);
  return m;
}

PhysicsMetrics physics_metrics(std::span<const PredictionRow> rows, const QmaxTable& qmax) {
  PhysicsMetrics m;
  if (rows.empty()) return m;
  std::size_t neg = 0, upper = 0, high = 0, in_band = 0;
  std::map<std::pair<std::string, double>, std::vector<std::pair<double, double>>> groups;
  for (const auto& r : rows) {
    const double cap = qmax.of(r.lithology);
    if (r.prediction < 0.0) ++neg;
    if (r.prediction > cap) ++upper;
    if (r.pressure > kHighPressureBar) {
      ++high;
      if (r.prediction >= kSaturationBandLow * cap && r.prediction <= cap) ++in_band;
    }
    groups[{r.sample_key, r.temperature}].emplace_back(r.pressure, r.prediction);
  }
  const auto n = static_cast<double>(rows.size());
  m.negative_rate = static_cast<double>(neg) / n;
  m.upper_violation_rate = static_cast<double>(upper) / n;
  if (high > 0) m.saturation_consistency = static_cast<double>(in_band) / static_cast<double>(high);
  std::size_t pairs = 0, ok = 0;
  for (auto& [_, pts] : groups) {
    std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 1; i < pts.size(); ++i) {
      ++pairs;
      if (pts[i].second - pts[i - 1].second >= -kMonotonicSlack) ++ok;
    }
  }
  if (pairs > 0) m.monotonicity_score = static_cast<double>(ok) / static_cast<double>(pairs);
  return m;
}

double coverage(std::span<const double> y, std::span<const double> lo, std::span<const double> hi) {
  if (y.size() != lo.size() || y.size() != hi.size())
    throw Error(Errc::LengthMismatch, "interval arrays differ in length");
  if (y.empty()) return 0.0;
  std::size_t in = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (lo[i] > hi[i]) throw Error(Errc::InvalidArgument, "interval with lo > hi");
    if (y[i] >= lo[i] && y[i] <= hi[i]) ++in;
  }
  return static_cast<double>(in) / static_cast<double>(y.size());
}

UqMetrics uq_metrics(std::span<const double> y, std::span<const double> mean, std::span<const double> sigma,
                     const std::vector<IntervalSet>& intervals) {
  check_lengths(y.size(), mean.size());
  check_lengths(y.size(), sigma.size());
  UqMetrics m;
  m.sharpness = stats::mean(sigma);
  std::vector<double> abs_err(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) abs_err[i] = std::abs(y[i] - mean[i]);
  m.unc_err_corr = stats::pearson(sigma, abs_err);

  double cal = 0.0;
  const IntervalSet* width_set = nullptr;
  double width_cov = 0.0;
  for (const auto& set : intervals) {
    const double c = coverage(y, set.lo, set.hi);
    cal += std::abs(c - set.nominal);
    if (std::abs(set.nominal - 0.68) < 1e-9) m.coverage68 = c;
    if (std::abs(set.nominal - 0.95) < 1e-9) m.coverage95 = c;
    if (std::abs(set.nominal - 0.99) < 1e-9) m.coverage99 = c;
    const bool prefer = std::abs(set.nominal - 0.95) < 1e-9;
    if (!width_set || prefer || (std::abs(width_set->nominal - 0.95) >= 1e-9 && set.nominal > width_set->nominal)) {
      width_set = &set;
      width_cov = c;
    }
  }
  if (!intervals.empty()) m.calibration_error = cal / static_cast<double>(intervals.size());
  if (width_set) {
    double w = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) w += width_set->hi[i] - width_set->lo[i];
    m.mpiw = w / static_cast<double>(y.size());
    const auto [mn, mx] = std::minmax_element(y.begin(), y.end());
    const double range = *mx - *mn;
    const double norm = range > 0 ? m.mpiw / range : m.mpiw;
    const double penalty = width_cov < width_set->nominal ? std::exp(-kCwcEta * (width_cov - width_set->nominal)) : 0.0;
    m.cwc = norm * (1.0 + penalty);
  }
  return m;
}

double durbin_watson(std::span<const double> e) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    den += e[i] * e[i];
    if (i > 0) num += (e[i] - e[i - 1]) * (e[i] - e[i - 1]);
  }
  if (den <= 0.0) throw Error(Errc::ZeroResidualVariance, "all residuals are zero");
  return num / den;
}

JarqueBera jarque_bera(std::span<const double> e) {
  const auto n = static_cast<double>(e.size());
  const double m = stats::mean(e);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : e) {
    const double d = v - m;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (!(m2 > 0.0)) throw Error(Errc::ZeroResidualVariance, "residuals have zero variance");
  const double skew = m3 / std::pow(m2, 1.5);
  const double kurt = m4 / (m2 * m2);
  JarqueBera jb;
  jb.statistic = n / 6.0 * (skew * skew + 0.25 * (kurt - 3.0) * (kurt - 3.0));
  jb.p_value = std::exp(-0.5 * jb.statistic);  // chi-square(2) survival function
  return jb;
}

ResidualTests residual_tests(std::span<const double> residuals, std::span<const double> predictions) {
  check_lengths(residuals.size(), predictions.size());
  if (stats::variance(residuals) <= 0.0) throw Error(Errc::ZeroResidualVariance, "all residuals are equal");
  ResidualTests t;
  t.durbin_watson = durbin_watson(residuals);
  t.jarque_bera = jarque_bera(residuals);
  std::vector<double> abs_e(residuals.size());
  for (std::size_t i = 0; i < residuals.size(); ++i) abs_e[i] = std::abs(residuals[i]);
  t.heteroscedasticity_rho = stats::spearman(abs_e, predictions);
  t.small_sample = residuals.size() < 8;
  return t;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  const auto& p = r.point;
  j["n"] = p.n;
  j["r2"] = p.r2;
  j["adj_r2"] = p.adj_r2;
  j["mse"] = p.mse;
  j["rmse"] = p.rmse;
  j["mae"] = p.mae;
  j["mape"] = opt(p.mape);
  j["mape_skipped"] = p.mape_skipped;
  j["max_error"] = p.max_error;
  j["explained_variance"] = p.explained_variance;
  j["mbe"] = p.mbe;
  j["pearson"] = p.pearson;
  j["spearman"] = p.spearman;
  j["kendall"] = p.kendall;
  j["physics"] = {{"negative_rate", r.physics.negative_rate},
                  {"upper_violation_rate", r.physics.upper_violation_rate},
                  {"monotonicity_score", opt(r.physics.monotonicity_score)},
                  {"saturation_consistency", opt(r.physics.saturation_consistency)}};
  std::size_t count = 12 + 4;
  if (r.uq) {
    const auto& u = *r.uq;
    j["uq"] = {{"coverage68", opt(u.coverage68)}, {"coverage95", opt(u.coverage95)}, {"coverage99", opt(u.coverage99)},
               {"calibration_error", u.calibration_error}, {"sharpness", u.sharpness}, {"mpiw", u.mpiw},
               {"cwc", u.cwc}, {"unc_err_corr", u.unc_err_corr}};
    count += 8;
  } else {
    j["uq"] = nullptr;
  }
  if (r.residual) {
    const auto& t = *r.residual;
    j["residual"] = {{"durbin_watson", t.durbin_watson},
                     {"jarque_bera", {{"stat", t.jarque_bera.statistic}, {"p", t.jarque_bera.p_value}}},
                     {"heteroscedasticity_rho", t.heteroscedasticity_rho},
                     {"small_sample", t.small_sample},
                     {"normality_test", "jarque_bera"}};
    count += 4;
  } else {
    j["residual"] = nullptr;
  }
  j["metric_count"] = count;
  return j;
}

}  // namespace sorbfit::eval
