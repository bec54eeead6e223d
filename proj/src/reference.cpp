#include "sorbfit/reference.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "sorbfit/error.hpp"

namespace sorbfit::reference {

using F = boost::multiprecision::cpp_bin_float_50;

double uptake_50(iso::FormId form, std::span<const double> k, double p_in, double T_in) {
  using iso::FormId;
  const F p = p_in, T = T_in, R = F("8.314462618");
  auto a = [&](std::size_t i) { return F(k[i]); };
  F q;
  switch (form) {
    case FormId::Henry: q = a(0) * p; break;
    case FormId::Langmuir: q = a(0) * a(1) * p / (1 + a(1) * p); break;
    case FormId::Freundlich: q = a(0) * pow(p, 1 / a(1)); break;
    case FormId::BET: {
      const F x = p / a(2);
      q = a(0) * a(1) * x / ((1 - x) * (1 + (a(1) - 1) * x));
      break;
    }
    case FormId::Temkin: q = R * T / a(0) * log(a(1) * p); break;
    case FormId::Toth: q = a(0) * p / pow(a(1) + pow(p, a(2)), 1 / a(2)); break;
    case FormId::Sips: {
      const F u = pow(a(1) * p, 1 / a(2));
      q = a(0) * u / (1 + u);
      break;
    }
    case FormId::RedlichPeterson: q = a(0) * p / (1 + a(1) * pow(p, a(2))); break;
    case FormId::DubininRadushkevich: {
      const F eps = R * T * log(1 + 1 / p);
      q = a(0) * exp(-a(1) * eps * eps);
      break;
    }
    case FormId::Hill: q = a(0) * pow(p, a(2)) / (pow(a(1), a(2)) + pow(p, a(2))); break;
    case FormId::Poly2:
    case FormId::Poly3:
    case FormId::Poly4: {
      const F x = p / 100;
      F xi = 1;
      q = 0;
      for (std::size_t i = 0; i < k.size(); ++i, xi *= x) q += a(i) * xi;
      break;
    }
    case FormId::ExpSingle: q = a(0) * (1 - exp(-a(1) * p)); break;
    case FormId::ExpDouble: q = a(0) * (1 - exp(-a(1) * p)) + a(2) * (1 - exp(-a(3) * p)); break;
    case FormId::PowerStd: q = a(0) * pow(p, a(1)); break;
    case FormId::PowerMod: q = a(0) * pow(p, a(1)) + a(2); break;
    case FormId::LogStd: q = a(0) * log(p) + a(1); break;
    case FormId::LogMod: q = a(0) * log(p + a(2)) + a(1); break;
    case FormId::Hyperbolic: q = a(0) * p / (a(1) + p); break;
    case FormId::Rational: q = (a(0) + a(1) * p) / (1 + a(2) * p); break;
    case FormId::WeibullGrowth: q = a(0) * (1 - exp(-pow(p / a(1), a(2)))); break;
    case FormId::Gompertz: q = a(0) * exp(-a(1) * exp(-a(2) * p)); break;
  }
  return q.convert_to<double>();
}

}  // namespace sorbfit::reference
