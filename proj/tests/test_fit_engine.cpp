#include "doctest.h"

#include <chrono>
#include <cmath>
#include <set>

#include "sorbfit/error.hpp"
#include "sorbfit/fit_engine.hpp"
#include "sorbfit/rng.hpp"
#include "sorbfit/stats.hpp"

using namespace sorbfit;
using namespace sorbfit::fit;
using iso::FormId;
using iso::IsothermPoint;

namespace {

std::vector<double> grid20() {
  std::vector<double> g;
  for (int i = 1; i <= 20; ++i) g.push_back(10.0 * i);
  return g;
}

std::vector<IsothermPoint> curve(FormId f, std::vector<double> k, const std::vector<double>& grid, double T = 298.15) {
  std::vector<IsothermPoint> pts;
  for (double p : grid) pts.push_back({p, T, iso::eval_form(f, k, p, T)});
  return pts;
}

std::vector<IsothermPoint> noisy(std::vector<IsothermPoint> pts, double sigma, Rng& rng) {
  for (auto& p : pts) p.uptake = std::max(0.0, p.uptake + sigma * standard_normal(rng));
  return pts;
}

}  // namespace

TEST_CASE("DE on a convex quadratic") {
  const std::vector<iso::ParamBound> b{{-10, 10, false}, {-10, 10, false}};
  DEConfig cfg;
  auto res = differential_evolution(
      [](std::span<const double> x) { return (x[0] - 0.3) * (x[0] - 0.3) + (x[1] - 0.02) * (x[1] - 0.02); }, b, cfg);
  CHECK(std::abs(res.best[0] - 0.3) < 1e-6);
  CHECK(std::abs(res.best[1] - 0.02) < 1e-6);
  for (std::size_t g = 1; g < res.history.size(); ++g) CHECK(res.history[g] <= res.history[g - 1]);
}

TEST_CASE("DE is deterministic and validates its configuration") {
  const std::vector<iso::ParamBound> b{{1e-3, 10, true}, {-5, 5, false}};
  auto obj = [](std::span<const double> x) { return std::pow(std::log(x[0]) - 0.5, 2) + std::abs(x[1] - 1.0); };
  auto a = differential_evolution(obj, b, {});
  auto c = differential_evolution(obj, b, {});
  CHECK(a.history == c.history);
  CHECK(a.best == c.best);
  DEConfig bad;
  bad.F = 2.5;
  CHECK_THROWS_AS(differential_evolution(obj, b, bad), Error);
  bad = {};
  bad.CR = -0.1;
  CHECK_THROWS_AS(differential_evolution(obj, b, bad), Error);
  bad = {};
  bad.population = 7;
  CHECK_THROWS_AS(differential_evolution(obj, b, bad), Error);
}

TEST_CASE("DE treats non-finite costs as +inf") {
  const std::vector<iso::ParamBound> b{{-1, 1, false}};
  auto res = differential_evolution(
      [](std::span<const double> x) { return x[0] < 0 ? std::nan("") : x[0] * x[0]; }, b, {});
  CHECK(res.best[0] >= 0.0);
  CHECK(res.best_cost < 1e-12);
}

TEST_CASE("Langmuir recovery on noiseless data") {
  auto pts = curve(FormId::Langmuir, {0.5, 0.05}, grid20());
  auto m = fit_sample(pts, FormId::Langmuir);
  CHECK(std::abs(m.params.values[0] / 0.5 - 1.0) < 1e-3);
  CHECK(std::abs(m.params.values[1] / 0.05 - 1.0) < 1e-3);
  CHECK(m.r2 >= 1.0 - 1e-9);
  CHECK(m.physics.score == 1.0);
}

TEST_CASE("fit_sample preconditions and domain failures") {
  auto two = curve(FormId::Sips, {0.5, 0.05, 0.7}, {10.0, 20.0});
  try {
    fit_sample(two, FormId::Sips);
    FAIL("expected InsufficientData");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InsufficientData);
  }
  auto with_zero = curve(FormId::Langmuir, {0.5, 0.05}, {0.0, 10.0, 20.0, 40.0});
  try {
    fit_sample(with_zero, FormId::LogStd);
    FAIL("expected AllCostsInfinite");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::AllCostsInfinite);
  }
}

TEST_CASE("misspecified Langmuir on Sips data") {
  auto pts = curve(FormId::Sips, {0.6, 0.02, 0.7}, grid20());
  auto m = fit_sample(pts, FormId::Langmuir);
  // the best two-parameter approximation cannot bend like n_s = 0.7
  CHECK(m.r2 < 1.0 - 1e-6);
  CHECK(m.r2 > 0.9);
  CHECK(m.physics.score >= 0.0);
  CHECK(m.physics.score <= 1.0);
}

TEST_CASE("information criteria arithmetic") {
  auto ic = information_criteria(10.0, 10, 2);
  CHECK(ic.aic == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(ic.bic == doctest::Approx(2.0 * std::log(10.0)).epsilon(1e-12));
  CHECK(ic.bic == doctest::Approx(4.6052).epsilon(1e-4));
  REQUIRE(ic.aicc);
  CHECK(*ic.aicc == doctest::Approx(4.0 + 12.0 / 7.0));
  CHECK(*ic.aicc >= ic.aic);
  auto k0 = information_criteria(3.0, 6, 0);
  CHECK(k0.aic == doctest::Approx(6.0 * std::log(0.5)));
  CHECK(k0.bic == k0.aic);
  CHECK_FALSE(information_criteria(1.0, 3, 2).aicc.has_value());
  CHECK(std::isfinite(information_criteria(0.0, 5, 1).aic));
}

TEST_CASE("model ranking rules") {
  FittedModel a, b;
  a.form = FormId::Langmuir;
  b.form = FormId::Freundlich;
  a.aic = 4.0;
  b.aic = 6.0;
  CHECK(select_best_model({b, a})[0].form == FormId::Langmuir);
  a.aic = b.aic = 5.0;
  a.physics.score = 0.6;
  b.physics.score = 1.0;
  CHECK(select_best_model({a, b})[0].form == FormId::Freundlich);
  // demotion: a flagged fit never outranks a compliant one, whatever its AIC
  a.aic = -100.0;
  CHECK(select_best_model({a, b})[0].form == FormId::Freundlich);
  CHECK_THROWS_AS(select_best_model({}), Error);
}

TEST_CASE("demotion property over random fit lists") {
  Rng rng = make_rng(3);
  for (int t = 0; t < 200; ++t) {
    std::vector<FittedModel> fits(1 + uniform_index(rng, 8));
    for (auto& f : fits) {
      f.form = iso::all_forms()[uniform_index(rng, 23)];
      f.aic = uniform(rng, -50, 50);
      f.physics.score = 0.2 * static_cast<double>(uniform_index(rng, 6));
    }
    auto ranked = select_best_model(fits);
    bool seen_flagged = false;
    for (const auto& f : ranked) {
      if (f.physics.flagged()) seen_flagged = true;
      else CHECK_FALSE(seen_flagged);
    }
  }
}

TEST_CASE("Sips-generated sample ranks Sips first among the individual forms") {
  auto pts = curve(FormId::Sips, {0.55, 0.015, 0.65}, grid20());
  std::vector<FittedModel> fits;
  for (auto f : iso::individual_forms()) {
    try {
      fits.push_back(fit_sample(pts, f));
    } catch (const Error&) {
    }
  }
  CHECK(select_best_model(fits)[0].form == FormId::Sips);
}

TEST_CASE("bootstrap on noiseless data collapses") {
  auto pts = curve(FormId::Langmuir, {0.5, 0.05}, grid20());
  auto ci = bootstrap_ci(pts, FormId::Langmuir, 60, 9);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(ci.lo[j] <= ci.hi[j]);
    CHECK(ci.hi[j] - ci.lo[j] < 1e-6);
  }
  auto again = bootstrap_ci(pts, FormId::Langmuir, 60, 9);
  CHECK(again.lo == ci.lo);
  CHECK(again.hi == ci.hi);
}

TEST_CASE("bootstrap coverage of true q_max under noise") {
  // 100 Monte-Carlo trials, 200 resamples each to bound runtime
  int covered = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng = make_rng(derive_seed(2024, trial));
    auto pts = noisy(curve(FormId::Langmuir, {0.5, 0.05}, grid20()), 0.01, rng);
    auto ci = bootstrap_ci(pts, FormId::Langmuir, 200, derive_seed(77, trial));
    CHECK(ci.lo[0] <= ci.hi[0]);
    if (ci.lo[0] <= 0.5 && 0.5 <= ci.hi[0]) ++covered;
  }
  MESSAGE("bootstrap coverage: " << covered << "/100");
  CHECK(covered >= 90);
}

TEST_CASE("k-fold CV") {
  auto pts = curve(FormId::Langmuir, {0.5, 0.05}, grid20());
  auto cv = kfold_cv(pts, FormId::Langmuir, 5, 1);
  CHECK(cv.mean_r2 >= 1.0 - 1e-6);
  auto loo = kfold_cv(pts, FormId::Langmuir, static_cast<int>(pts.size()), 1);
  CHECK(loo.k == 20);
  CHECK(loo.mean_r2 >= 1.0 - 1e-6);
  auto labels = fold_labels(20, 20, 1);
  std::set<int> distinct(labels.begin(), labels.end());
  CHECK(distinct.size() == 20);
  CHECK(fold_labels(17, 5, 4) == fold_labels(17, 5, 4));
  CHECK_THROWS_AS(kfold_cv(curve(FormId::Langmuir, {0.5, 0.05}, {1, 2, 3}), FormId::Sips, 3, 1), Error);

  Rng rng = make_rng(8);
  auto noisy_pts = noisy(curve(FormId::Langmuir, {0.5, 0.05}, grid20()), 0.01, rng);
  auto m = fit_sample(noisy_pts, FormId::Langmuir);
  auto ncv = kfold_cv(noisy_pts, FormId::Langmuir, 5, 2);
  CHECK(std::abs(m.r2 - ncv.mean_r2) < 0.05);
}

TEST_CASE("aggregated fitting") {
  const auto grid = std::vector<double>{1, 2, 5, 10, 20, 35, 50, 75, 100, 150};
  const std::vector<FormId> forms{FormId::Langmuir, FormId::Sips, FormId::Freundlich};

  SUBCASE("group of one sample equals the individual fit") {
    auto pts = curve(FormId::Sips, {0.5, 0.03, 0.8}, grid);
    AggregateOptions o;
    o.r2_boot = 50;
    auto rep = fit_aggregated({{"one", pts}}, forms, o);
    for (const auto& c : rep.cells) {
      REQUIRE(c.ok);
      auto m = fit_sample(pts, c.form, o.fit);
      CHECK(c.params == m.params.values);
      CHECK(c.train_r2 == m.r2);
    }
  }
  SUBCASE("homogeneous vs heterogeneous groups") {
    Rng rng = make_rng(12);
    std::vector<IsothermPoint> homo, hetero;
    std::vector<double> indiv;
    for (int s = 0; s < 20; ++s) {
      auto h = noisy(curve(FormId::Sips, {0.6, 0.03, 0.8}, grid), 0.005, rng);
      homo.insert(homo.end(), h.begin(), h.end());
      indiv.push_back(fit_sample(h, FormId::Sips).r2);
      const double q = 0.1 + 1.0 * uniform01(rng), K = std::exp(uniform(rng, std::log(0.002), std::log(0.5)));
      auto x = noisy(curve(FormId::Sips, {q, K, uniform(rng, 0.5, 1.0)}, grid), 0.005, rng);
      hetero.insert(hetero.end(), x.begin(), x.end());
    }
    AggregateOptions o;
    o.r2_boot = 100;
    auto rep = fit_aggregated({{"homo", homo}, {"hetero", hetero}}, forms, o);
    const double mean_indiv = stats::mean(indiv);
    CHECK(std::abs(*rep.best_r2("homo") - mean_indiv) < 0.02);
    CHECK(*rep.best_r2("hetero") < 0.6);
    for (const auto& c : rep.cells) {
      if (!c.ok) continue;
      CHECK(c.r2_ci_lo <= c.r2_ci_hi);
      REQUIRE(c.durbin_watson);
      CHECK(*c.durbin_watson >= 0.0);
      CHECK(*c.durbin_watson <= 4.0);
    }
    auto j = to_json(rep);
    CHECK(j["cells"].size() == 6);
  }
}
