#include "doctest.h"

#include <cmath>

#include "sorbfit/error.hpp"
#include "sorbfit/rng.hpp"
#include "sorbfit/thermo.hpp"

using namespace sorbfit;
using namespace sorbfit::thermo;

namespace {
const std::vector<double> kTemps{298.15, 323.15, 348.15};

std::vector<std::pair<double, double>> generate(double K0, double dH) {
  std::vector<std::pair<double, double>> out;
  for (double T : kTemps) out.emplace_back(T, vant_hoff_K(K0, dH, T));
  return out;
}
}  // namespace

TEST_CASE("constant K gives zero enthalpy") {
  auto t = vant_hoff({{298.15, 0.05}, {323.15, 0.05}, {348.15, 0.05}});
  CHECK(std::abs(t.dH) < 1e-12);
}

TEST_CASE("generate-then-regress recovers dH = -10 kJ/mol") {
  auto t = vant_hoff(generate(1e-4, -10.0));
  CHECK(std::abs(t.dH + 10.0) <= 1e-6);
  CHECK(t.n_temps == 3);
  CHECK(t.r2_fit == doctest::Approx(1.0));
  CHECK(t.dG(298.15) == t.dH - 298.15 * t.dS / 1000.0);
  for (const auto& [T, g] : t.dG_at) CHECK(std::abs(g - (t.dH - T * t.dS / 1000.0)) <= 1e-9);
}

TEST_CASE("Van't Hoff round trip over the physisorption range") {
  Rng rng = make_rng(4);
  for (int i = 0; i < 200; ++i) {
    const double dH = uniform(rng, -30.0, -5.0);
    const double K0 = std::exp(uniform(rng, std::log(1e-7), std::log(1e-2)));
    auto t = vant_hoff(generate(K0, dH));
    CHECK(std::abs(t.dH / dH - 1.0) <= 1e-6);
    CHECK(std::abs(t.K0 / K0 - 1.0) <= 1e-6);
  }
}

TEST_CASE("two-point and error paths") {
  auto t = vant_hoff({{300.0, 0.1}, {330.0, 0.05}});
  CHECK(t.two_point);
  CHECK(t.r2_fit == 1.0);
  auto code = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::InvalidArgument;
  };
  CHECK(code([] { vant_hoff({{300.0, 0.1}, {330.0, 0.0}}); }) == Errc::NonPositiveK);
  CHECK(code([] { vant_hoff({{300.0, 0.1}, {300.0, 0.2}}); }) == Errc::SingleTemperature);
}

TEST_CASE("Langmuir isosteric heat equals -dH") {
  const double dH = -10.0, K0 = 2e-4, qmax = 0.8;
  std::vector<TempModel> models;
  for (double T : kTemps) models.push_back({T, iso::FormId::Langmuir, {qmax, vant_hoff_K(K0, dH, T)}});
  auto c = isosteric_heat(models, {0.1, 0.2, 0.3, 0.4, 0.5});
  REQUIRE(c.n_levels == 5);
  for (double q : c.q_st) CHECK(std::abs(q - 10.0) < 1e-3);

  auto omit = isosteric_heat(models, {0.2, 0.9});
  CHECK(omit.n_levels == 1);
  REQUIRE(omit.omitted_levels.size() == 1);
  CHECK(omit.omitted_levels[0] == 0.9);
  CHECK_THROWS_AS(isosteric_heat(models, {0.95}), Error);
  CHECK_THROWS_AS(isosteric_heat({models[0]}, {0.2}), Error);
}

TEST_CASE("Gibbs classification") {
  CHECK(classify_gibbs(-16.6) == GibbsClass::Moderate);
  CHECK(classify_gibbs(-20.0) == GibbsClass::Moderate);
  CHECK(classify_gibbs(-30.8) == GibbsClass::Strong);
  CHECK(classify_gibbs(-10.0) == GibbsClass::Weak);
  CHECK(classify_gibbs(-5.4) == GibbsClass::Weak);
  CHECK(classify_gibbs(0.0) == GibbsClass::NotFavorable);
  CHECK(classify_gibbs(3.0) == GibbsClass::NotFavorable);
}
