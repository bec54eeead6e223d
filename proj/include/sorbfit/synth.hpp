#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sorbfit/data_core.hpp"
#include "sorbfit/isotherm_models.hpp"

namespace sorbfit::synth {

enum class TruthForm { Sips, Langmuir };

/// Coefficients tying material properties to isotherm parameters. Each
/// lithology has a capacity driver u in [0,1]: log surface area (clay), TOC
/// (shale), fixed carbon (coal).
struct LinkCoefficients {
  double capacity = 0.25;        // ln q_max = ln q_lith - capacity (1 - u)
  double affinity = 1.0;         // ln K_ref grows by affinity (phi - 0.5), phi = micropore fraction driver
  std::array<double, 3> k_center{0.10, 0.07, 0.14};  // K_ref (1/bar) at 298.15 K, per lithology
  double n_s_center = 0.70;
  double n_s_link = 0.1;         // n_s shifts by -n_s_link (u - 0.5)
  double dH_mid = -17.5;         // kJ/mol at phi = 0.5
  double dH_link = 15.0;         // dH = dH_mid - dH_link (phi - 0.5)
};

/// Standard deviations of the property-independent scatter, multiplied by
/// the heterogeneity dial.
struct Dispersion {
  double log_q = 0.05;
  double log_k = 0.2;
  double n_s = 0.08;
  double dH = 3.0;
};

struct PopulationSpec {
  std::array<int, 3> n_samples{40, 40, 40};  // clay, shale, coal
  TruthForm truth_form = TruthForm::Sips;
  LinkCoefficients link;
  Dispersion dispersion;
  double heterogeneity = 1.0;
  double noise_sigma = 0.005;  // mmol/g
  double missing_rate = 0.05;  // probability a property cell is blanked
  std::vector<double> temperatures{298.15};
  std::vector<double> pressure_grid{1, 2, 5, 10, 20, 35, 50, 75, 100, 150};
  QmaxTable qmax;
  double reference_temperature = 298.15;
  double characteristic_pressure = 100.0;  // bar, at the reference temperature
  std::uint64_t seed = 42;
};

struct SampleTruth {
  std::string sample_key;
  data::Lithology lithology = data::Lithology::Clay;
  TruthForm form = TruthForm::Sips;
  double q_max = 0.0;
  double K_ref = 0.0;  // 1/bar at reference temperature
  double T_ref = 298.15;
  double n_s = 1.0;
  double dH = 0.0;     // kJ/mol
  data::SamplePropertySet properties;  // complete, before missingness

  double K_at(double T) const;
  double K0() const;
  iso::FormId iso_form() const { return form == TruthForm::Sips ? iso::FormId::Sips : iso::FormId::Langmuir; }
  std::vector<double> params_at(double T) const;
  double uptake(double p, double T) const;
};

struct GroundTruth {
  std::map<std::string, SampleTruth> samples;
  const SampleTruth& at(const std::string& key) const;
};

struct Population {
  std::vector<data::IsothermRecord> isotherms;
  std::vector<data::SamplePropertySet> properties;
  GroundTruth truth;
};

Population gen_population(const PopulationSpec& spec);

/// Noisy isotherm of one sample at temperature T; uptakes clipped at 0.
std::vector<data::IsothermRecord> gen_isotherm(const SampleTruth& truth, double T, const std::vector<double>& grid,
                                               double noise_sigma, std::uint64_t seed);

nlohmann::json to_json(const PopulationSpec& s);
/// Strict: unknown keys raise InvalidArgument.
PopulationSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GroundTruth& t);

}  // namespace sorbfit::synth
