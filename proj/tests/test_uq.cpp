#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "sorbfit/error.hpp"
#include "sorbfit/experiment.hpp"
#include "sorbfit/rng.hpp"
#include "sorbfit/uq.hpp"

using namespace sorbfit;
using namespace sorbfit::uq;

namespace {

Vector constant(Eigen::Index n, double v) { return Vector::Constant(n, v); }

std::vector<Vector> random_members(Rng& rng, int k, Eigen::Index n) {
  std::vector<Vector> out;
  for (int m = 0; m < k; ++m) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = uniform(rng, 0.0, 1.5);
    out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_CASE("spec: standard ensemble layout") {
  const auto s = EnsembleSpec::standard();
  REQUIRE(s.members.size() == 10);
  std::vector<std::uint64_t> seeds;
  std::set<double> widths;
  std::set<int> depths;
  for (const auto& m : s.members) {
    seeds.push_back(m.seed);
    widths.insert(m.width_mult);
    depths.insert(m.depth);
  }
  CHECK(seeds == std::vector<std::uint64_t>{42, 123, 456, 789, 2024, 3141, 1618, 2718, 9999, 7777});
  CHECK(widths.size() >= 3);
  CHECK(depths.size() >= 2);
  CHECK_NOTHROW(s.validate());

  const auto b = EnsembleSpec::seeds_only();
  for (std::size_t i = 0; i < b.members.size(); ++i) {
    CHECK(b.members[i].seed == s.members[i].seed);
    CHECK(b.members[i].depth == 4);
    CHECK(b.members[i].width_mult == 1.0);
  }
  CHECK(backbone_for_depth(4) == std::vector<int>{256, 512, 256, 128});
  CHECK_THROWS_AS(backbone_for_depth(6), Error);

  EnsembleSpec one;
  one.members.resize(1);
  try {
    one.validate();
    FAIL("expected TooFewMembers");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TooFewMembers);
  }
}

TEST_CASE("aggregate: two members 0.1 and 0.3") {
  const auto p = aggregate({constant(3, 0.1), constant(3, 0.3)});
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(p.mean[i] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(p.sigma_raw[i] == doctest::Approx(0.1).epsilon(1e-12));
  }
  CHECK(z_for(0.95) == doctest::Approx(1.959964).epsilon(1e-6));
  CHECK(p.intervals[1].hi[0] == doctest::Approx(0.2 + 1.959964 * 0.1).epsilon(1e-6));
}

TEST_CASE("aggregate: identical members give zero spread and degenerate intervals") {
  Rng rng = make_rng(3);
  auto m = random_members(rng, 1, 20);
  const auto p = aggregate({m[0], m[0], m[0]});
  CHECK(p.sigma_raw.maxCoeff() == 0.0);
  for (const auto& iv : p.intervals) {
    CHECK((iv.lo - p.mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK((iv.hi - p.mean).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("aggregate: errors") {
  try {
    aggregate({constant(3, 0.1)});
    FAIL("expected TooFewMembers");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TooFewMembers);
  }
  try {
    aggregate({constant(3, 0.1), constant(4, 0.1)});
    FAIL("expected LengthMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::LengthMismatch);
  }
}

TEST_CASE("aggregate: invariants and permutation invariance (property)") {
  Rng rng = make_rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + static_cast<int>(uniform_index(rng, 9));
    auto m = random_members(rng, k, 30);
    const double tau = std::exp(uniform(rng, -2.0, 2.0));
    const auto a = aggregate(m, tau);
    CHECK(a.mean.minCoeff() >= 0.0);
    CHECK(a.sigma_raw.minCoeff() >= 0.0);
    CHECK((a.sigma_cal - tau * a.sigma_raw).cwiseAbs().maxCoeff() <= 1e-15 * (1.0 + tau));
    for (const auto& iv : a.intervals) {
      CHECK((iv.lo.array() <= a.mean.array()).all());
      CHECK((a.mean.array() <= iv.hi.array()).all());
    }
    shuffle(m.begin(), m.end(), rng);
    const auto b = aggregate(m, tau);
    CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((a.sigma_raw - b.sigma_raw).cwiseAbs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("coverage is non-decreasing in tau (property)") {
  Rng rng = make_rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index n = 50 + static_cast<Eigen::Index>(uniform_index(rng, 200));
    Vector mean(n), sigma(n), y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mean[i] = uniform(rng, 0.0, 1.0);
      sigma[i] = uniform(rng, 0.0, 0.1);
      y[i] = mean[i] + 0.1 * standard_normal(rng);
    }
    for (double level : kLevels) {
      double prev = -1.0;
      for (double lt = -3.0; lt <= 3.0; lt += 0.1) {
        const double c = coverage(mean, sigma, y, std::pow(10.0, lt), level);
        CHECK(c >= prev);
        prev = c;
      }
    }
  }
}

TEST_CASE("calibration: raw coverage exactly 95% keeps tau = 1") {
  const Eigen::Index n = 1000;
  Vector mean = Vector::Zero(n), sigma = Vector::Ones(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = i < 950 ? 1.0 : 100.0;
  const auto r = calibrate_temperature(mean, sigma, y);
  CHECK(r.tau == 1.0);
  CHECK(r.reached);
  CHECK(r.coverage_before[1] == doctest::Approx(0.95));
  CHECK(r.coverage_after[1] == doctest::Approx(0.95));
}

TEST_CASE("calibration: under-dispersed Gaussian toy recovers tau = 2") {
  // y ~ N(mean, (2 sigma)^2): coverage(tau) = 2 Phi(tau z / 2) - 1 hits 0.95 at tau = 2.
  Rng rng = make_rng(17);
  const Eigen::Index n = 20000;
  Vector mean(n), sigma(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    mean[i] = uniform(rng, 0.0, 1.0);
    sigma[i] = uniform(rng, 0.01, 0.05);
    y[i] = mean[i] + 2.0 * sigma[i] * standard_normal(rng);
  }
  const auto r = calibrate_temperature(mean, sigma, y);
  CHECK(r.reached);
  CHECK(r.tau == doctest::Approx(2.0).epsilon(0.05));
  CHECK(std::abs(r.coverage_after[1] - 0.95) <= kCoverageBand);
  CHECK(r.coverage_before[1] < 0.7);
  // Calibration changes spreads only.
  const auto before = aggregate({mean - sigma, mean + sigma}, 1.0);
  const auto after = aggregate({mean - sigma, mean + sigma}, r.tau);
  CHECK((before.mean - after.mean).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("calibration: degenerate and unreachable") {
  const Vector y = constant(100, 1.0), mean = constant(100, 0.0);
  try {
    calibrate_temperature(mean, Vector::Zero(100), y);
    FAIL("expected DegenerateSpread");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DegenerateSpread);
  }
  Vector sigma = Vector::Zero(100);
  sigma.head(60).setConstant(1e-9);
  try {
    calibrate_temperature(mean, sigma, y);
    FAIL("expected UnreachableTarget");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnreachableTarget);
  }
}

TEST_CASE("diversity: duplicated and independent members") {
  Rng rng = make_rng(23);
  auto m = random_members(rng, 1, 100);
  const auto d = ensemble_diversity({m[0], m[0]});
  CHECK(d.mean_correlation == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.mean_sigma == 0.0);

  const auto ind = ensemble_diversity(random_members(rng, 5, 1000));
  CHECK(std::abs(ind.mean_correlation) < 0.2);
  CHECK_THROWS_AS(ensemble_diversity(random_members(rng, 2, 5)), Error);
}

TEST_CASE("json: ensemble spec round trip and strictness") {
  const auto s = EnsembleSpec::standard();
  const auto back = ensemble_spec_from_json(to_json(s));
  CHECK(back.members == s.members);
  auto j = to_json(s);
  j["members"][0]["colour"] = 1;
  CHECK_THROWS_AS(ensemble_spec_from_json(j), Error);
  CalibrationResult c;
  c.tau = 1.5;
  CHECK(to_json(c)["coverage_after"].contains("95"));
}

TEST_CASE("diversity: architecture-diverse ensemble is less correlated than seeds only (reduced scale)") {
  synth::PopulationSpec spec;
  spec.n_samples = {14, 14, 14};
  const auto c = experiment::make_corpus(spec);
  pinn::TrainSchedule s;
  s.epochs = {8, 0, 0};
  const int d = static_cast<int>(c.fit.pipeline.inputs.size());
  auto run = [&](const EnsembleSpec& es) {
    Ensemble e{es, {}, 1.0};
    train_ensemble(e, d, c.dtrain, c.dval, s);
    return ensemble_diversity(member_predictions(e, c.dtest.X, c.dtest.PT));
  };
  const auto diverse = run(EnsembleSpec::standard());
  const auto plain = run(EnsembleSpec::seeds_only());
  MESSAGE("mean r diverse " << diverse.mean_correlation << " seeds-only " << plain.mean_correlation);
  CHECK(diverse.mean_correlation < plain.mean_correlation);
}
