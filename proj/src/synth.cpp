#include "sorbfit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "sorbfit/error.hpp"
#include "sorbfit/rng.hpp"

namespace sorbfit::synth {

namespace {

constexpr double kClayAreaLow = 2.96;
constexpr double kClayAreaHigh = 273.1;

double log_uniform(Rng& rng, double lo, double hi) { return std::exp(uniform(rng, std::log(lo), std::log(hi))); }

// Draws the complete property row and returns the capacity driver u and
// micropore driver phi.
std::pair<double, double> draw_properties(data::SamplePropertySet& p, Rng& rng) {
  const double phi = uniform01(rng);
  double u = 0.0;
  double vol_per_area = 0.0;
  switch (p.lithology) {
    case data::Lithology::Clay: {
      p.surface_area = log_uniform(rng, kClayAreaLow, kClayAreaHigh);
      u = (std::log(*p.surface_area) - std::log(kClayAreaLow)) / (std::log(kClayAreaHigh) - std::log(kClayAreaLow));
      vol_per_area = uniform(rng, 0.0015, 0.003);
      p.moisture = uniform(rng, 1.0, 8.0);
      p.mineral_fractions["kaolinite"] = uniform(rng, 10.0, 60.0);
      p.mineral_fractions["illite"] = uniform(rng, 5.0, 30.0);
      p.mineral_fractions["smectite"] = uniform(rng, 0.0, 20.0);
      p.mineral_fractions["quartz"] = uniform(rng, 0.0, 15.0);
      break;
    }
    case data::Lithology::Shale: {
      p.toc = uniform(rng, 0.5, 10.0);
      u = (*p.toc - 0.5) / 9.5;
      p.surface_area = 2.0 + 4.0 * *p.toc * uniform(rng, 0.8, 1.2) + uniform(rng, 0.0, 10.0);
      vol_per_area = uniform(rng, 0.0015, 0.003);
      p.vitrinite_reflectance = uniform(rng, 0.6, 3.0);
      p.moisture = uniform(rng, 0.5, 4.0);
      p.mineral_fractions["pyrite"] = uniform(rng, 0.5, 5.0);
      p.mineral_fractions["quartz"] = uniform(rng, 20.0, 50.0);
      p.mineral_fractions["illite"] = uniform(rng, 10.0, 35.0);
      p.mineral_fractions["calcite"] = uniform(rng, 0.0, 10.0);
      break;
    }
    case data::Lithology::Coal: {
      p.fixed_carbon = uniform(rng, 40.0, 85.0);
      u = (*p.fixed_carbon - 40.0) / 45.0;
      p.vitrinite_reflectance = std::max(0.2, 0.3 + 0.045 * (*p.fixed_carbon - 40.0) + 0.1 * standard_normal(rng));
      p.ash = uniform(rng, 3.0, 25.0);
      p.moisture = uniform(rng, 1.0, 10.0);
      p.volatile_matter = std::max(1.0, 100.0 - *p.fixed_carbon - *p.ash - *p.moisture);
      p.surface_area = log_uniform(rng, 20.0, 250.0);
      vol_per_area = uniform(rng, 0.001, 0.002);
      p.carbon = std::min(95.0, 60.0 + 0.4 * (*p.fixed_carbon - 40.0) + uniform(rng, -2.0, 2.0));
      p.hydrogen = 6.5 - 0.05 * (*p.fixed_carbon - 40.0) + uniform(rng, -0.3, 0.3);
      p.vitrinite = uniform(rng, 50.0, 85.0);
      p.inertinite = 100.0 - *p.vitrinite - uniform(rng, 2.0, 10.0);
      break;
    }
  }
  p.pore_volume = *p.surface_area * vol_per_area;
  p.micropore_volume = *p.pore_volume * (0.1 + 0.5 * phi);
  p.avg_pore_diameter = 4000.0 * *p.pore_volume / *p.surface_area;  // cylindrical pores, nm
  return {u, phi};
}

void blank_cells(data::SamplePropertySet& p, double rate, Rng& rng) {
  for (const auto& col : data::property_columns()) {
    if (col.member == &data::SamplePropertySet::characteristic_uptake) continue;
    auto& cell = p.*(col.member);
    const bool drop = uniform01(rng) < rate;
    if (drop) cell.reset();
  }
  for (auto it = p.mineral_fractions.begin(); it != p.mineral_fractions.end();) {
    if (uniform01(rng) < rate) it = p.mineral_fractions.erase(it);
    else ++it;
  }
}

std::string truth_name(TruthForm f) { return f == TruthForm::Sips ? "Sips" : "Langmuir"; }

TruthForm parse_truth(const std::string& s) {
  if (s == "Sips" || s == "sips") return TruthForm::Sips;
  if (s == "Langmuir" || s == "langmuir") return TruthForm::Langmuir;
  throw Error(Errc::InvalidArgument, "truth_form must be Sips or Langmuir");
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(Errc::InvalidArgument, where + " must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok |= k == a;
    if (!ok) throw Error(Errc::InvalidArgument, "unknown key '" + k + "' in " + where);
  }
}

}  // namespace

double SampleTruth::K_at(double T) const {
  return K_ref * std::exp(-dH * 1000.0 / iso::kGasConstant * (1.0 / T - 1.0 / T_ref));
}

double SampleTruth::K0() const { return K_ref * std::exp(dH * 1000.0 / (iso::kGasConstant * T_ref)); }

std::vector<double> SampleTruth::params_at(double T) const {
  if (form == TruthForm::Sips) return {q_max, K_at(T), n_s};
  return {q_max, K_at(T)};
}

double SampleTruth::uptake(double p, double T) const { return iso::eval_form(iso_form(), params_at(T), p, T); }

const SampleTruth& GroundTruth::at(const std::string& key) const {
  auto it = samples.find(key);
  if (it == samples.end()) throw Error(Errc::InvalidArgument, "no ground truth for sample '" + key + "'");
  return it->second;
}

std::vector<data::IsothermRecord> gen_isotherm(const SampleTruth& truth, double T, const std::vector<double>& grid,
                                               double noise_sigma, std::uint64_t seed) {
  if (!std::is_sorted(grid.begin(), grid.end())) throw Error(Errc::InvalidArgument, "pressure grid must be ascending");
  Rng rng = make_rng(seed);
  std::vector<data::IsothermRecord> out;
  for (double p : grid) {
    double q = truth.uptake(p, T);
    if (noise_sigma > 0.0) q += noise_sigma * standard_normal(rng);
    out.push_back({truth.sample_key, truth.lithology, p, T, std::max(0.0, q)});
  }
  return out;
}

Population gen_population(const PopulationSpec& spec) {
  if (spec.pressure_grid.empty() || spec.temperatures.empty())
    throw Error(Errc::InvalidArgument, "population needs a pressure grid and temperatures");
  if (!std::is_sorted(spec.pressure_grid.begin(), spec.pressure_grid.end()))
    throw Error(Errc::InvalidArgument, "pressure grid must be ascending");
  for (int n : spec.n_samples)
    if (n < 0) throw Error(Errc::InvalidArgument, "negative sample count");
  if (spec.noise_sigma < 0.0 || spec.missing_rate < 0.0 || spec.missing_rate > 1.0 || spec.heterogeneity < 0.0)
    throw Error(Errc::InvalidArgument, "noise, missing rate and heterogeneity must be non-negative (rate <= 1)");

  Population pop;
  const double h = spec.heterogeneity;
  for (std::size_t l = 0; l < 3; ++l) {
    const auto lith = data::kLithologies[l];
    const double cap = spec.qmax.of(lith);
    for (int i = 0; i < spec.n_samples[l]; ++i) {
      Rng rng = make_rng(derive_seed(spec.seed, l, static_cast<std::uint64_t>(i)));
      SampleTruth t;
      char key[32];
      std::snprintf(key, sizeof key, "%s_%03d", std::string(data::to_string(lith)).c_str(), i);
      t.sample_key = key;
      t.lithology = lith;
      t.form = spec.truth_form;
      t.T_ref = spec.reference_temperature;
      t.properties.sample_key = t.sample_key;
      t.properties.lithology = lith;
      const auto [u, phi] = draw_properties(t.properties, rng);

      const double zq = standard_normal(rng), zk = standard_normal(rng), zn = standard_normal(rng),
                   zh = standard_normal(rng);
      const auto& L = spec.link;
      const auto& D = spec.dispersion;
      t.q_max = std::clamp(cap * std::exp(-L.capacity * (1.0 - u) + h * D.log_q * zq), 0.05 * cap, cap);
      t.K_ref = L.k_center[l] * std::exp(L.affinity * (phi - 0.5) + h * D.log_k * zk);
      t.n_s = spec.truth_form == TruthForm::Sips
                  ? std::clamp(L.n_s_center - L.n_s_link * (u - 0.5) + h * D.n_s * zn, 0.3, 1.0)
                  : 1.0;
      t.dH = std::clamp(L.dH_mid - L.dH_link * (phi - 0.5) + h * D.dH * zh, -30.0, -5.0);

      const double q_char = t.uptake(spec.characteristic_pressure, spec.reference_temperature);
      t.properties.characteristic_uptake = std::max(0.0, q_char + spec.noise_sigma * standard_normal(rng));

      auto observed = t.properties;
      Rng miss = make_rng(derive_seed(spec.seed, l, static_cast<std::uint64_t>(i), 7));
      blank_cells(observed, spec.missing_rate, miss);
      pop.properties.push_back(observed);

      for (std::size_t ti = 0; ti < spec.temperatures.size(); ++ti) {
        auto recs = gen_isotherm(t, spec.temperatures[ti], spec.pressure_grid, spec.noise_sigma,
                                 derive_seed(spec.seed, l, static_cast<std::uint64_t>(i), 1000 + ti));
        pop.isotherms.insert(pop.isotherms.end(), recs.begin(), recs.end());
      }
      pop.truth.samples.emplace(t.sample_key, std::move(t));
    }
  }
  return pop;
}

nlohmann::json to_json(const PopulationSpec& s) {
  return {{"n_samples", s.n_samples},
          {"truth_form", truth_name(s.truth_form)},
          {"link",
           {{"capacity", s.link.capacity},
            {"affinity", s.link.affinity},
            {"k_center", s.link.k_center},
            {"n_s_center", s.link.n_s_center},
            {"n_s_link", s.link.n_s_link},
            {"dH_mid", s.link.dH_mid},
            {"dH_link", s.link.dH_link}}},
          {"dispersion",
           {{"log_q", s.dispersion.log_q}, {"log_k", s.dispersion.log_k}, {"n_s", s.dispersion.n_s}, {"dH", s.dispersion.dH}}},
          {"heterogeneity", s.heterogeneity},
          {"noise_sigma", s.noise_sigma},
          {"missing_rate", s.missing_rate},
          {"temperatures", s.temperatures},
          {"pressure_grid", s.pressure_grid},
          {"qmax", {{"clay", s.qmax.clay}, {"shale", s.qmax.shale}, {"coal", s.qmax.coal}}},
          {"reference_temperature", s.reference_temperature},
          {"characteristic_pressure", s.characteristic_pressure},
          {"seed", s.seed}};
}

PopulationSpec spec_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"n_samples", "truth_form", "link", "dispersion", "heterogeneity", "noise_sigma", "missing_rate",
                  "temperatures", "pressure_grid", "qmax", "reference_temperature", "characteristic_pressure", "seed"},
                 "population spec");
  PopulationSpec s;
  try {
    if (j.contains("n_samples")) s.n_samples = j["n_samples"].get<std::array<int, 3>>();
    if (j.contains("truth_form")) s.truth_form = parse_truth(j["truth_form"].get<std::string>());
    if (j.contains("link")) {
      const auto& l = j["link"];
      reject_unknown(l, {"capacity", "affinity", "k_center", "n_s_center", "n_s_link", "dH_mid", "dH_link"}, "link");
      s.link.capacity = l.value("capacity", s.link.capacity);
      s.link.affinity = l.value("affinity", s.link.affinity);
      if (l.contains("k_center")) s.link.k_center = l["k_center"].get<std::array<double, 3>>();
      s.link.n_s_center = l.value("n_s_center", s.link.n_s_center);
      s.link.n_s_link = l.value("n_s_link", s.link.n_s_link);
      s.link.dH_mid = l.value("dH_mid", s.link.dH_mid);
      s.link.dH_link = l.value("dH_link", s.link.dH_link);
    }
    if (j.contains("dispersion")) {
      const auto& d = j["dispersion"];
      reject_unknown(d, {"log_q", "log_k", "n_s", "dH"}, "dispersion");
      s.dispersion.log_q = d.value("log_q", s.dispersion.log_q);
      s.dispersion.log_k = d.value("log_k", s.dispersion.log_k);
      s.dispersion.n_s = d.value("n_s", s.dispersion.n_s);
      s.dispersion.dH = d.value("dH", s.dispersion.dH);
    }
    s.heterogeneity = j.value("heterogeneity", s.heterogeneity);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.missing_rate = j.value("missing_rate", s.missing_rate);
    if (j.contains("temperatures")) s.temperatures = j["temperatures"].get<std::vector<double>>();
    if (j.contains("pressure_grid")) s.pressure_grid = j["pressure_grid"].get<std::vector<double>>();
    if (j.contains("qmax")) {
      const auto& q = j["qmax"];
      reject_unknown(q, {"clay", "shale", "coal"}, "qmax");
      s.qmax.clay = q.value("clay", s.qmax.clay);
      s.qmax.shale = q.value("shale", s.qmax.shale);
      s.qmax.coal = q.value("coal", s.qmax.coal);
    }
    s.reference_temperature = j.value("reference_temperature", s.reference_temperature);
    s.characteristic_pressure = j.value("characteristic_pressure", s.characteristic_pressure);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("population spec: ") + e.what());
  }
  return s;
}

nlohmann::json to_json(const GroundTruth& t) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [key, s] : t.samples) {
    arr.push_back({{"sample_key", key},
                   {"lithology", std::string(data::to_string(s.lithology))},
                   {"form", truth_name(s.form)},
                   {"q_max", s.q_max},
                   {"K_ref", s.K_ref},
                   {"T_ref", s.T_ref},
                   {"n_s", s.n_s},
                   {"dH_kJ_mol", s.dH},
                   {"K0", s.K0()}});
  }
  return {{"samples", arr}};
}

}  // namespace sorbfit::synth
