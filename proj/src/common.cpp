#include "sorbfit/error.hpp"
#include "sorbfit/parallel.hpp"
#include "sorbfit/rng.hpp"
#include "sorbfit/stats.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

namespace sorbfit {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "IoError";
    case Errc::MissingColumn: return "MissingColumn";
    case Errc::ParseError: return "ParseError";
    case Errc::EmptyFile: return "EmptyFile";
    case Errc::DuplicateSampleKey: return "DuplicateSampleKey";
    case Errc::InsufficientSamples: return "InsufficientSamples";
    case Errc::DomainError: return "DomainError";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::AllCostsInfinite: return "AllCostsInfinite";
    case Errc::NoConvergedFits: return "NoConvergedFits";
    case Errc::TooManyFailedRefits: return "TooManyFailedRefits";
    case Errc::DegenerateN: return "DegenerateN";
    case Errc::NonPositiveK: return "NonPositiveK";
    case Errc::SingleTemperature: return "SingleTemperature";
    case Errc::NoInvertibleLevels: return "NoInvertibleLevels";
    case Errc::MissingThermoInputs: return "MissingThermoInputs";
    case Errc::AllMissingColumn: return "AllMissingColumn";
    case Errc::SingularSystem: return "SingularSystem";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::DivergenceDetected: return "DivergenceDetected";
    case Errc::TooFewMembers: return "TooFewMembers";
    case Errc::DegenerateSpread: return "DegenerateSpread";
    case Errc::UnreachableTarget: return "UnreachableTarget";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::ZeroResidualVariance: return "ZeroResidualVariance";
  }
  return "Unknown";
}

double standard_normal(Rng& rng) {
  // Box-Muller on our own uniforms; std::normal_distribution is not
  // reproducible across standard libraries.
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace sorbfit

namespace sorbfit::stats {

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
  if (x.empty()) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) { return std::sqrt(variance(x)); }

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) return std::nan("");
  if (sorted.size() == 1) return sorted[0];
  q = std::clamp(q, 0.0, 1.0);
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double quantile(std::span<const double> x, double q) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  return quantile_sorted(s, q);
}

double median(std::span<const double> x) { return quantile(x, 0.5); }

Quartiles quartiles(std::span<const double> x) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  return {quantile_sorted(s, 0.25), quantile_sorted(s, 0.5), quantile_sorted(s, 0.75)};
}

std::vector<double> ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = std::min(x.size(), y.size());
  if (n < 2) return 0.0;
  const double mx = mean(x.first(n));
  const double my = mean(y.first(n));
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry);
}

double kendall(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = std::min(x.size(), y.size());
  // O(n^2) is fine at evaluation sizes (test splits of a few hundred rows).
  double concordant = 0.0, discordant = 0.0, tx = 0.0, ty = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0) {
        tx += 1.0;
      } else if (dy == 0.0) {
        ty += 1.0;
      } else if ((dx > 0) == (dy > 0)) {
        concordant += 1.0;
      } else {
        discordant += 1.0;
      }
    }
  }
  const double denom = std::sqrt((concordant + discordant + tx) * (concordant + discordant + ty));
  if (denom <= 0.0) return 0.0;
  return (concordant - discordant) / denom;
}

double r2_score(std::span<const double> y, std::span<const double> yhat) {
  const double my = mean(y);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    ss_tot += (y[i] - my) * (y[i] - my);
  }
  if (ss_tot <= 0.0) return ss_res <= 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double normal_cdf(double x) {
  return boost::math::cdf(boost::math::normal_distribution<double>(), x);
}

}  // namespace sorbfit::stats

namespace sorbfit {

namespace {
std::atomic<unsigned> g_threads{1};
}

unsigned worker_threads() { return g_threads.load(); }
void set_worker_threads(unsigned n) { g_threads.store(n == 0 ? 1 : n); }

}  // namespace sorbfit
