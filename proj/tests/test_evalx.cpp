#include "doctest.h"

#include <cmath>

#include "sorbfit/error.hpp"
#include "sorbfit/evalx.hpp"
#include "sorbfit/isotherm_models.hpp"
#include "sorbfit/rng.hpp"
#include "sorbfit/stats.hpp"

using namespace sorbfit;
using namespace sorbfit::eval;

TEST_CASE("point metrics on exact predictions") {
  std::vector<double> y{0.1, 0.4, 0.35, 0.8, 0.05};
  auto m = point_metrics(y, y);
  CHECK(m.r2 == 1.0);
  CHECK(m.rmse == 0.0);
  CHECK(m.mae == 0.0);
  CHECK(m.mbe == 0.0);
  CHECK(m.pearson == doctest::Approx(1.0));
  CHECK(m.n == 5);
}

TEST_CASE("constant mean prediction gives r2 = 0") {
  std::vector<double> y{1, 2, 3, 4};
  std::vector<double> c(4, 2.5);
  CHECK(point_metrics(y, c).r2 == doctest::Approx(0.0));
}

TEST_CASE("offset predictions") {
  std::vector<double> y{0.2, 0.5, 0.9, 1.1, 0.7};
  std::vector<double> yh;
  for (double v : y) yh.push_back(v + 0.01);
  auto m = point_metrics(y, yh);
  const double mean = stats::mean(y);
  double ss_tot = 0;
  for (double v : y) ss_tot += (v - mean) * (v - mean);
  CHECK(m.mbe == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(m.mae == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(m.r2 == doctest::Approx(1.0 - 5 * 1e-4 / ss_tot).epsilon(1e-12));
  CHECK(m.rmse * m.rmse == doctest::Approx(m.mse));
}

TEST_CASE("r2 identity and MAPE skips zeros") {
  Rng rng = make_rng(1);
  std::vector<double> y, yh;
  for (int i = 0; i < 50; ++i) {
    y.push_back(i % 7 == 0 ? 0.0 : uniform01(rng));
    yh.push_back(uniform01(rng));
  }
  auto m = point_metrics(y, yh);
  const double mean = stats::mean(y);
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - yh[i]) * (y[i] - yh[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  CHECK(std::abs(m.r2 + ss_res / ss_tot - 1.0) < 1e-12);
  CHECK(m.mape_skipped == 8);
  CHECK_THROWS_AS(point_metrics(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), Error);
  CHECK_THROWS_AS(point_metrics(std::vector<double>{}, std::vector<double>{}), Error);
}

TEST_CASE("physics metrics") {
  std::vector<PredictionRow> rows;
  for (int i = 0; i < 5; ++i) rows.push_back({"a", data::Lithology::Clay, 60.0 + i, 300.0, 0.9 + 0.01 * i});
  auto m = physics_metrics(rows);
  CHECK(m.negative_rate == 0.0);
  CHECK(*m.monotonicity_score == 1.0);
  CHECK(*m.saturation_consistency == 1.0);  // all inside [0.84, 1.2]
  rows.push_back({"b", data::Lithology::Coal, 10.0, 300.0, -0.1});
  rows.push_back({"b", data::Lithology::Coal, 20.0, 300.0, 1.0});  // above 0.88
  rows.push_back({"b", data::Lithology::Coal, 30.0, 300.0, 0.5});  // decrease
  m = physics_metrics(rows);
  CHECK(m.negative_rate == doctest::Approx(1.0 / 8));
  CHECK(m.upper_violation_rate == doctest::Approx(1.0 / 8));
  CHECK(*m.monotonicity_score == doctest::Approx(5.0 / 6));
  CHECK_FALSE(physics_metrics(std::vector<PredictionRow>{{"x", data::Lithology::Shale, 5, 300, 0.1}})
                  .saturation_consistency.has_value());
}

TEST_CASE("monotonicity score of a fitted monotone form is 1") {
  std::vector<PredictionRow> rows;
  for (int i = 0; i <= 40; ++i) {
    const double p = 5.0 * i;
    rows.push_back({"s", data::Lithology::Shale, p, 300.0,
                    iso::eval_form(iso::FormId::Sips, std::vector<double>{0.7, 0.02, 0.8}, p, 300.0)});
  }
  CHECK(*physics_metrics(rows).monotonicity_score == 1.0);
}

TEST_CASE("uq metrics") {
  std::vector<double> y{1, 2, 3};
  std::vector<double> mean = y, sigma{0, 0, 0};
  IntervalSet z{0.95, y, y};
  auto u = uq_metrics(y, mean, sigma, {z});
  CHECK(*u.coverage95 == 1.0);
  CHECK(u.mpiw == 0.0);

  Rng rng = make_rng(99);
  std::vector<double> yy, mm, ss;
  for (int i = 0; i < 2000; ++i) {
    const double s = 0.05 + 0.1 * uniform01(rng);
    mm.push_back(1.0);
    ss.push_back(s);
    yy.push_back(1.0 + s * standard_normal(rng));
  }
  std::vector<IntervalSet> sets;
  for (double lvl : {0.68, 0.95, 0.99}) {
    IntervalSet st{lvl, {}, {}};
    const double zq = stats::normal_quantile(0.5 + lvl / 2);
    for (std::size_t i = 0; i < yy.size(); ++i) {
      st.lo.push_back(mm[i] - zq * ss[i]);
      st.hi.push_back(mm[i] + zq * ss[i]);
    }
    sets.push_back(st);
  }
  auto g = uq_metrics(yy, mm, ss, sets);
  CHECK(*g.coverage95 >= 0.93);
  CHECK(*g.coverage95 <= 0.97);
  CHECK(*g.coverage99 >= *g.coverage95);
  CHECK(*g.coverage95 >= *g.coverage68);
  CHECK(g.sharpness == doctest::Approx(stats::mean(ss)));
}

TEST_CASE("Durbin-Watson and residual tests") {
  CHECK(durbin_watson(std::vector<double>{0.3, 0.3, 0.3}) == 0.0);
  CHECK(durbin_watson(std::vector<double>{1, -1, 1, -1}) == doctest::Approx(3.0));
  CHECK_THROWS_AS(residual_tests(std::vector<double>{0.3, 0.3, 0.3}, std::vector<double>{1, 2, 3}), Error);
  Rng rng = make_rng(5);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> e(50);
    for (auto& v : e) v = uniform(rng, -1, 1);
    const double dw = durbin_watson(e);
    CHECK(dw >= 0.0);
    CHECK(dw <= 4.0);
  }
  int pass = 0;
  for (int seed = 0; seed < 100; ++seed) {
    Rng r = make_rng(derive_seed(31, seed));
    std::vector<double> e(1000), pred(1000);
    for (std::size_t i = 0; i < e.size(); ++i) {
      e[i] = standard_normal(r);
      pred[i] = uniform01(r);
    }
    if (residual_tests(e, pred).jarque_bera.p_value > 0.01) ++pass;
  }
  CHECK(pass >= 95);
}

TEST_CASE("report JSON keys") {
  MetricReport r;
  r.point = point_metrics(std::vector<double>{1, 2, 3}, std::vector<double>{1.1, 1.9, 3.2});
  auto j = to_json(r);
  for (const char* k : {"r2", "adj_r2", "mse", "rmse", "mae", "mape", "max_error", "explained_variance", "mbe",
                        "pearson", "spearman", "kendall", "physics", "uq", "residual"})
    CHECK(j.contains(k));
}
