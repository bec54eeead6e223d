#include "doctest.h"

#include <cmath>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "sorbfit/error.hpp"
#include "sorbfit/isotherm_models.hpp"
#include "sorbfit/rng.hpp"

using namespace sorbfit;
using namespace sorbfit::iso;

namespace {

std::vector<double> draw_params(FormId f, Rng& rng) {
  std::vector<double> out;
  for (const auto& b : param_bounds(f)) {
    if (b.log_scale) out.push_back(std::exp(uniform(rng, std::log(b.low), std::log(b.high))));
    else out.push_back(uniform(rng, b.low, b.high));
  }
  return out;
}

}  // namespace

TEST_CASE("registry shape") {
  CHECK(all_forms().size() == 23);
  CHECK(classical_forms().size() == 10);
  CHECK(individual_forms().size() == 9);
  CHECK(info(FormId::Henry).n_params == 1);
  CHECK(info(FormId::Langmuir).n_params == 2);
  CHECK(info(FormId::Freundlich).n_params == 2);
  CHECK(info(FormId::BET).n_params == 2);
  CHECK(info(FormId::Temkin).n_params == 2);
  CHECK(info(FormId::Toth).n_params == 3);
  CHECK(info(FormId::Sips).n_params == 3);
  CHECK(info(FormId::RedlichPeterson).n_params == 3);
  CHECK(info(FormId::DubininRadushkevich).n_params == 2);
  for (auto f : all_forms()) {
    CHECK(parse_form(to_string(f)) == f);
    for (const auto& b : param_bounds(f)) {
      CHECK(std::isfinite(b.low));
      CHECK(std::isfinite(b.high));
      CHECK(b.low < b.high);
    }
  }
  auto j = registry_json();
  CHECK(j.size() == 23);
  CHECK(j[1]["id"] == "Langmuir");
}

TEST_CASE("bounds quoted for Langmuir, Toth, Poly4") {
  auto l = param_bounds(FormId::Langmuir);
  CHECK(l[0].low == 0.001);
  CHECK(l[0].high == 100.0);
  CHECK(l[1].low == 1e-6);
  CHECK(l[1].high == 100.0);
  auto t = param_bounds(FormId::Toth);
  CHECK(t[2].low > 0.0);
  CHECK(t[2].high == 1.0);
  for (const auto& b : param_bounds(FormId::Poly4)) {
    CHECK(b.low == -10.0);
    CHECK(b.high == 10.0);
  }
}

TEST_CASE("Langmuir limits") {
  const std::vector<double> k{0.5, 0.05};
  CHECK(eval_form(FormId::Langmuir, k, 0.0, 298.15) == 0.0);
  CHECK(std::abs(eval_form(FormId::Langmuir, k, 1e6, 298.15) - 0.5) < 1e-4);
  ParamVector pv{FormId::Langmuir, k};
  CHECK(pv.get("q_max") == 0.5);
  CHECK(pv.get("K_L") == 0.05);
  CHECK_THROWS_AS(pv.get("n_s"), Error);
}

TEST_CASE("Sips at median parameters against 50-digit arithmetic") {
  using boost::multiprecision::cpp_bin_float_50;
  const cpp_bin_float_50 q = 0.445, K = 0.012, ns = 0.702, p = 50.0;
  const cpp_bin_float_50 u = pow(K * p, 1 / ns);
  const double ref = static_cast<double>(q * u / (1 + u));
  const double got = eval_form(FormId::Sips, std::vector<double>{0.445, 0.012, 0.702}, 50.0, 298.15);
  CHECK(std::abs(got - ref) <= 1e-12 * std::abs(ref));
}

TEST_CASE("domain errors") {
  auto code = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::InvalidArgument;
  };
  CHECK(code([] { eval_form(FormId::Temkin, std::vector<double>{100.0, 0.1}, 0.0, 300.0); }) == Errc::DomainError);
  CHECK(code([] { eval_form(FormId::BET, std::vector<double>{1.0, 10.0, 50.0}, 60.0, 300.0); }) == Errc::DomainError);
  CHECK(code([] { eval_form(FormId::LogStd, std::vector<double>{1.0, 0.0}, 0.0, 300.0); }) == Errc::DomainError);
  CHECK(code([] { eval_form(FormId::Langmuir, std::vector<double>{1.0, 0.1}, -1.0, 300.0); }) == Errc::DomainError);
  CHECK(std::isnan(eval_form_nothrow(FormId::Temkin, std::vector<double>{100.0, 0.1}, 0.0, 300.0)));
  // removable singularity
  CHECK(eval_form(FormId::DubininRadushkevich, std::vector<double>{1.0, 1e-8}, 0.0, 300.0) == 0.0);
}

TEST_CASE("Langmuir reductions") {
  const double qmax = 0.8, K = 0.037;
  for (int i = 0; i < 50; ++i) {
    const double p = 0.5 + 4.0 * i;
    const double lang = eval_form(FormId::Langmuir, std::vector<double>{qmax, K}, p, 300.0);
    CHECK(std::abs(eval_form(FormId::Toth, std::vector<double>{qmax, 1.0 / K, 1.0}, p, 300.0) - lang) <= 1e-10);
    CHECK(std::abs(eval_form(FormId::Sips, std::vector<double>{qmax, K, 1.0}, p, 300.0) - lang) <= 1e-10);
    CHECK(std::abs(eval_form(FormId::RedlichPeterson, std::vector<double>{qmax * K, K, 1.0}, p, 300.0) - lang) <=
          1e-10);
  }
}

TEST_CASE("low-pressure slope equals Henry coefficient") {
  const double h = 1e-7;
  const double qmax = 0.6, K = 0.05;
  auto slope = [&](FormId f, std::vector<double> k) { return eval_form(f, k, h, 300.0) / h; };
  CHECK(std::abs(slope(FormId::Langmuir, {qmax, K}) - qmax * K) <= 1e-6);
  CHECK(std::abs(slope(FormId::Sips, {qmax, K, 1.0}) - qmax * K) <= 1e-6);
  // Toth: Henry coefficient q_max / b^(1/t); the p^t correction decays slowly,
  // so probe much closer to zero
  const double b = 4.0, t = 0.5, h_toth = 1e-14;
  const double toth_slope = eval_form(FormId::Toth, std::vector<double>{qmax, b, t}, h_toth, 300.0) / h_toth;
  CHECK(std::abs(toth_slope - qmax / std::pow(b, 1.0 / t)) <= 1e-6);
}

TEST_CASE("monotone forms are non-decreasing in pressure for in-bounds parameters") {
  Rng rng = make_rng(11);
  const FormId forms[] = {FormId::Henry, FormId::Langmuir, FormId::Freundlich, FormId::Temkin,
                          FormId::Toth,  FormId::Sips,     FormId::Hill};
  for (auto f : forms) {
    for (int trial = 0; trial < 500; ++trial) {
      auto k = draw_params(f, rng);
      double p1 = uniform(rng, 0.0, 200.0), p2 = uniform(rng, 0.0, 200.0);
      if (p1 > p2) std::swap(p1, p2);
      const double T = uniform(rng, 77.0, 400.0);
      const double q1 = eval_form_nothrow(f, k, p1, T), q2 = eval_form_nothrow(f, k, p2, T);
      if (std::isnan(q1) || std::isnan(q2)) continue;  // Temkin outside its domain
      CHECK(q2 >= q1 - 1e-12 * std::max(1.0, std::abs(q1)));
    }
  }
}

TEST_CASE("every form evaluates on in-bounds draws over positive pressures") {
  Rng rng = make_rng(5);
  for (auto f : all_forms()) {
    if (f == FormId::Temkin || f == FormId::BET) continue;  // domain depends on K_T p and p/p0
    for (int trial = 0; trial < 200; ++trial) {
      auto k = draw_params(f, rng);
      const double p = uniform(rng, 0.1, 200.0);
      CHECK(std::isfinite(eval_form(f, k, p, 298.15)));
    }
  }
}

TEST_CASE("physics validation examples") {
  std::vector<IsothermPoint> data;
  for (int i = 1; i <= 8; ++i) data.push_back({5.0 * i, 298.15, 0.05 * i});  // max q = 0.4
  auto s = validate_physics(FormId::Langmuir, std::vector<double>{0.5, 0.05}, data);
  CHECK(s.score == 1.0);
  CHECK_FALSE(s.flagged());

  auto fr = validate_physics(FormId::Freundlich, std::vector<double>{0.05, 0.8}, data);
  CHECK(fr.score == doctest::Approx(0.8));
  REQUIRE(fr.violated_checks.size() == 1);
  CHECK(fr.violated_checks[0] == "favorability");

  auto sat = validate_physics(FormId::Langmuir, std::vector<double>{0.3, 0.05}, data);
  REQUIRE(sat.violated_checks.size() == 1);
  CHECK(sat.violated_checks[0] == "saturation");

  auto poly = validate_physics(FormId::Poly2, std::vector<double>{0.0, 1.0, -10.0}, data);
  bool mono_failed = false;
  for (const auto& c : poly.violated_checks) mono_failed |= c == "monotonicity";
  CHECK(mono_failed);
}
