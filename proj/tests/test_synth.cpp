#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "sorbfit/error.hpp"
#include "sorbfit/fit_engine.hpp"
#include "sorbfit/stats.hpp"
#include "sorbfit/synth.hpp"
#include "sorbfit/thermo.hpp"

using namespace sorbfit;

namespace {

synth::SampleTruth langmuir_truth(double q, double K) {
  synth::SampleTruth t;
  t.sample_key = "s";
  t.form = synth::TruthForm::Langmuir;
  t.q_max = q;
  t.K_ref = K;
  t.dH = -10.0;
  return t;
}

// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return d;
}

}  // namespace

TEST_CASE("gen_isotherm: Langmuir at K p = 1 gives half capacity") {
  auto t = langmuir_truth(0.5, 0.05);
  auto recs = synth::gen_isotherm(t, 298.15, {0.0, 20.0}, 0.0, 1);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].uptake == 0.0);
  CHECK(recs[1].uptake == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("gen_isotherm: rejects unsorted grid") {
  auto t = langmuir_truth(0.5, 0.05);
  CHECK_THROWS_AS(synth::gen_isotherm(t, 298.15, {10.0, 5.0}, 0.0, 1), Error);
}

TEST_CASE("gen_isotherm: noise standard deviation") {
  auto t = langmuir_truth(5.0, 0.05);  // keeps uptakes far from the clip at 0
  std::vector<double> grid;
  for (int i = 0; i < 500; ++i) grid.push_back(10.0 + 0.1 * i);
  auto recs = synth::gen_isotherm(t, 298.15, grid, 0.01, 99);
  std::vector<double> r;
  for (const auto& rec : recs) r.push_back(rec.uptake - t.uptake(rec.pressure, 298.15));
  const double s = std::sqrt(stats::variance(r));
  CHECK(s > 0.008);
  CHECK(s < 0.012);
}

TEST_CASE("gen_population: noiseless records lie on the generating curve") {
  synth::PopulationSpec spec;
  spec.n_samples = {1, 1, 1};
  spec.noise_sigma = 0.0;
  spec.temperatures = {298.15, 323.15};
  auto pop = synth::gen_population(spec);
  CHECK(pop.isotherms.size() == 3 * 2 * spec.pressure_grid.size());
  for (const auto& r : pop.isotherms) {
    const auto& t = pop.truth.at(r.sample_key);
    CHECK(r.uptake == t.uptake(r.pressure, r.temperature));
  }
}

TEST_CASE("gen_population: invariants over many samples") {
  synth::PopulationSpec spec;
  spec.n_samples = {100, 100, 100};
  spec.heterogeneity = 2.0;
  auto pop = synth::gen_population(spec);
  CHECK(pop.truth.samples.size() == 300);
  CHECK(pop.properties.size() == 300);
  for (const auto& [key, t] : pop.truth.samples) {
    CHECK(t.q_max <= spec.qmax.of(t.lithology));
    CHECK(t.q_max > 0.0);
    CHECK(t.dH >= -30.0);
    CHECK(t.dH <= -5.0);
    CHECK(t.n_s > 0.0);
    CHECK(t.n_s <= 1.0);
    CHECK(t.properties.sample_key == key);
  }
  for (const auto& r : pop.isotherms) CHECK(r.uptake >= 0.0);
  CHECK_THROWS_AS(pop.truth.at("nope"), Error);
}

TEST_CASE("gen_population: deterministic for a seed, different across seeds") {
  synth::PopulationSpec spec;
  spec.n_samples = {5, 5, 5};
  auto a = synth::gen_population(spec);
  auto b = synth::gen_population(spec);
  REQUIRE(a.isotherms.size() == b.isotherms.size());
  for (std::size_t i = 0; i < a.isotherms.size(); ++i) CHECK(a.isotherms[i].uptake == b.isotherms[i].uptake);
  CHECK(a.properties == b.properties);
  spec.seed = 43;
  auto c = synth::gen_population(spec);
  std::set<double> qa, qc;
  for (const auto& [k, t] : a.truth.samples) qa.insert(t.K_ref);
  for (const auto& [k, t] : c.truth.samples) qc.insert(t.K_ref);
  for (double q : qa) CHECK(qc.count(q) == 0);
}

TEST_CASE("gen_population: two seeds share marginal statistics") {
  synth::PopulationSpec spec;
  spec.n_samples = {120, 0, 0};
  auto a = synth::gen_population(spec);
  spec.seed = 7;
  auto b = synth::gen_population(spec);
  std::vector<double> qa, qb, ka, kb;
  for (const auto& [k, t] : a.truth.samples) qa.push_back(t.q_max), ka.push_back(t.K_ref);
  for (const auto& [k, t] : b.truth.samples) qb.push_back(t.q_max), kb.push_back(t.K_ref);
  // Critical value at alpha = 0.001 for n = m = 120.
  const double crit = 1.95 * std::sqrt(2.0 / 120.0);
  CHECK(ks_statistic(qa, qb) < crit);
  CHECK(ks_statistic(ka, kb) < crit);
}

TEST_CASE("gen_population: clay surface area tracks characteristic uptake") {
  int passed = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    synth::PopulationSpec spec;
    spec.n_samples = {100, 0, 0};
    spec.missing_rate = 0.0;
    spec.seed = seed;
    auto pop = synth::gen_population(spec);
    std::vector<double> s, q;
    for (const auto& p : pop.properties) {
      s.push_back(*p.surface_area);
      q.push_back(*p.characteristic_uptake);
    }
    const double r = stats::pearson(s, q);
    MESSAGE("seed " << seed << " pearson " << r);
    passed += r > 0.5;
  }
  CHECK(passed == 10);
}

TEST_CASE("gen_population: missingness blanks cells at the requested rate") {
  synth::PopulationSpec spec;
  spec.n_samples = {100, 100, 100};
  spec.missing_rate = 0.2;
  auto pop = synth::gen_population(spec);
  int present_truth = 0, present_obs = 0;
  for (const auto& obs : pop.properties) {
    const auto& full = pop.truth.at(obs.sample_key).properties;
    for (const auto& col : data::property_columns()) {
      if ((full.*(col.member)).has_value()) ++present_truth;
      if ((obs.*(col.member)).has_value()) {
        ++present_obs;
        CHECK(*(obs.*(col.member)) == *(full.*(col.member)));
      }
    }
    CHECK(obs.characteristic_uptake.has_value());
  }
  const double kept = double(present_obs) / present_truth;
  CHECK(kept > 0.75);
  CHECK(kept < 0.87);
}

TEST_CASE("synth closure: Van't Hoff recovers the drawn enthalpy") {
  synth::PopulationSpec spec;
  spec.n_samples = {3, 3, 3};
  for (const auto& [key, t] : synth::gen_population(spec).truth.samples) {
    std::vector<std::pair<double, double>> kt;
    for (double T : {298.15, 323.15, 348.15}) kt.emplace_back(T, t.K_at(T));
    auto th = thermo::vant_hoff(kt);
    CHECK(std::abs(th.dH - t.dH) < 1e-6);
    CHECK(th.K0 == doctest::Approx(t.K0()).epsilon(1e-8));
  }
}

TEST_CASE("synth closure: fitting noiseless data recovers the truth") {
  synth::PopulationSpec spec;
  spec.n_samples = {2, 2, 2};
  spec.noise_sigma = 0.0;
  auto pop = synth::gen_population(spec);
  for (const auto& [key, t] : pop.truth.samples) {
    std::vector<iso::IsothermPoint> pts;
    for (const auto& r : pop.isotherms)
      if (r.sample_key == key) pts.push_back({r.pressure, r.temperature, r.uptake});
    auto m = fit::fit_sample(pts, iso::FormId::Sips);
    auto truth = t.params_at(298.15);
    for (std::size_t i = 0; i < truth.size(); ++i)
      CHECK(std::abs(m.params.values[i] - truth[i]) / truth[i] < 1e-3);
  }
}

TEST_CASE("spec JSON round-trip and strictness") {
  synth::PopulationSpec spec;
  spec.n_samples = {3, 4, 5};
  spec.truth_form = synth::TruthForm::Langmuir;
  spec.link.k_center = {0.1, 0.2, 0.3};
  spec.temperatures = {280.0, 300.0};
  spec.seed = 17;
  auto back = synth::spec_from_json(synth::to_json(spec));
  CHECK(synth::to_json(back) == synth::to_json(spec));

  CHECK_THROWS_AS(synth::spec_from_json({{"n_sample", {1, 2, 3}}}), Error);
  CHECK_THROWS_AS(synth::spec_from_json({{"link", {{"capacty", 1.0}}}}), Error);
  CHECK_THROWS_AS(synth::spec_from_json({{"truth_form", "Toth"}}), Error);
  CHECK_THROWS_AS(synth::spec_from_json({{"seed", "abc"}}), Error);
  CHECK(synth::spec_from_json(nlohmann::json::object()).n_samples[0] == 40);
}
