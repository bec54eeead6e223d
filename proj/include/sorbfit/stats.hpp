#pragma once

#include <span>
#include <vector>

namespace sorbfit::stats {

double mean(std::span<const double> x);
/// Population (divide by n) variance.
double variance(std::span<const double> x);
double stddev(std::span<const double> x);

/// Quantile with linear interpolation between order statistics
/// (position (n-1)*q). This is the only quartile convention in the project.
double quantile(std::span<const double> x, double q);
double quantile_sorted(std::span<const double> sorted, double q);
double median(std::span<const double> x);

struct Quartiles {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double iqr() const { return q3 - q1; }
};
Quartiles quartiles(std::span<const double> x);

/// Average ranks (1-based), ties share the mean rank.
std::vector<double> ranks(std::span<const double> x);

/// Returns 0 when either side has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
/// Kendall tau-b.
double kendall(std::span<const double> x, std::span<const double> y);

double r2_score(std::span<const double> y, std::span<const double> yhat);

double normal_quantile(double p);
double normal_cdf(double x);

}  // namespace sorbfit::stats
