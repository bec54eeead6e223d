#include "sorbfit/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "sorbfit/baselines.hpp"
#include "sorbfit/error.hpp"
#include "sorbfit/fit_engine.hpp"
#include "sorbfit/parallel.hpp"
#include "sorbfit/rng.hpp"
#include "sorbfit/stats.hpp"

namespace sorbfit::features {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct RowInputs {
  double p = kNaN, T = kNaN, q = kNaN;
  data::Lithology lith = data::Lithology::Clay;
  const data::SamplePropertySet* props = nullptr;
  const FeatureContext* ctx = nullptr;

  double prop(std::optional<double> data::SamplePropertySet::*m) const {
    return props && (props->*m) ? *(props->*m) : kNaN;
  }
  double mineral(const std::string& name) const {
    if (!props) return kNaN;
    auto it = props->mineral_fractions.find(name);
    return it == props->mineral_fractions.end() ? kNaN : it->second;
  }
};

using P = data::SamplePropertySet;

double ratio(double a, double b) { return b != 0.0 ? a / b : kNaN; }
double safe_log(double x) { return x > 0.0 ? std::log(x) : kNaN; }
double indicator(double x, bool cond) { return std::isnan(x) ? kNaN : (cond ? 1.0 : 0.0); }

struct Formula {
  const char* name;
  Category cat;
  const char* text;
  std::vector<std::string> inputs;
  std::function<double(const RowInputs&)> fn;
  bool uses_target = false;
};

const std::vector<Formula>& formulas() {
  using C = Category;
  static const std::vector<Formula> f = [] {
    std::vector<Formula> v;
    auto add = [&](const char* n, C c, const char* t, std::vector<std::string> in, std::function<double(const RowInputs&)> fn,
                   bool target = false) { v.push_back({n, c, t, std::move(in), std::move(fn), target}); };
    // thermodynamic
    add("temperature_K", C::Thermodynamic, "T", {"temperature"}, [](const RowInputs& r) { return r.T; });
    add("pressure_bar", C::Thermodynamic, "p", {"pressure"}, [](const RowInputs& r) { return r.p; });
    add("ln_p", C::Thermodynamic, "ln max(p, 1e-6)", {"pressure"},
        [](const RowInputs& r) { return std::log(std::max(r.p, kPressureFloor)); });
    add("reduced_temperature", C::Thermodynamic, "T / 33.19", {"temperature"},
        [](const RowInputs& r) { return r.T / kCriticalTemperature; });
    add("reduced_pressure", C::Thermodynamic, "p / 13.13", {"pressure"},
        [](const RowInputs& r) { return r.p / kCriticalPressure; });
    add("inverse_temperature", C::Thermodynamic, "1 / T", {"temperature"}, [](const RowInputs& r) { return 1.0 / r.T; });
    add("dG_approx", C::Thermodynamic, "-R T ln max(q / p, 1e-12), kJ/mol", {"temperature", "pressure", "uptake"},
        [](const RowInputs& r) {
          if (std::isnan(r.q)) return kNaN;
          const double k = std::max(r.q / std::max(r.p, kPressureFloor), kKeffFloor);
          return -iso::kGasConstant * r.T * std::log(k) / 1000.0;
        },
        true);
    // pore structure
    add("surface_area", C::PoreStructure, "S_BET", {"surface_area"}, [](const RowInputs& r) { return r.prop(&P::surface_area); });
    add("pore_volume", C::PoreStructure, "V_total", {"pore_volume"}, [](const RowInputs& r) { return r.prop(&P::pore_volume); });
    add("micropore_volume", C::PoreStructure, "V_micro", {"micropore_volume"},
        [](const RowInputs& r) { return r.prop(&P::micropore_volume); });
    add("avg_pore_diameter", C::PoreStructure, "d_pore", {"avg_pore_diameter"},
        [](const RowInputs& r) { return r.prop(&P::avg_pore_diameter); });
    add("micropore_fraction", C::PoreStructure, "V_micro / V_total", {"micropore_volume", "pore_volume"},
        [](const RowInputs& r) { return ratio(r.prop(&P::micropore_volume), r.prop(&P::pore_volume)); });
    add("surface_density", C::PoreStructure, "S_BET / V_total", {"surface_area", "pore_volume"},
        [](const RowInputs& r) { return ratio(r.prop(&P::surface_area), r.prop(&P::pore_volume)); });
    add("confinement", C::PoreStructure, "d_pore / 0.289", {"avg_pore_diameter"},
        [](const RowInputs& r) { return r.prop(&P::avg_pore_diameter) / kH2Diameter; });
    add("log_surface_area", C::PoreStructure, "ln S_BET", {"surface_area"},
        [](const RowInputs& r) { return safe_log(r.prop(&P::surface_area)); });
    add("log_pore_volume", C::PoreStructure, "ln V_total", {"pore_volume"},
        [](const RowInputs& r) { return safe_log(r.prop(&P::pore_volume)); });
    // surface chemistry and composition
    add("lithology_clay", C::SurfaceChemistry, "1[clay]", {"lithology"},
        [](const RowInputs& r) { return r.lith == data::Lithology::Clay ? 1.0 : 0.0; });
    add("lithology_shale", C::SurfaceChemistry, "1[shale]", {"lithology"},
        [](const RowInputs& r) { return r.lith == data::Lithology::Shale ? 1.0 : 0.0; });
    add("lithology_coal", C::SurfaceChemistry, "1[coal]", {"lithology"},
        [](const RowInputs& r) { return r.lith == data::Lithology::Coal ? 1.0 : 0.0; });
    add("toc", C::SurfaceChemistry, "TOC", {"toc"}, [](const RowInputs& r) { return r.prop(&P::toc); });
    add("fixed_carbon", C::SurfaceChemistry, "FC", {"fixed_carbon"}, [](const RowInputs& r) { return r.prop(&P::fixed_carbon); });
    add("volatile_matter", C::SurfaceChemistry, "VM", {"volatile_matter"},
        [](const RowInputs& r) { return r.prop(&P::volatile_matter); });
    add("vitrinite_reflectance", C::SurfaceChemistry, "%Ro", {"vitrinite_reflectance"},
        [](const RowInputs& r) { return r.prop(&P::vitrinite_reflectance); });
    add("ash", C::SurfaceChemistry, "ash", {"ash"}, [](const RowInputs& r) { return r.prop(&P::ash); });
    add("moisture", C::SurfaceChemistry, "moisture", {"moisture"}, [](const RowInputs& r) { return r.prop(&P::moisture); });
    add("carbon", C::SurfaceChemistry, "C", {"carbon"}, [](const RowInputs& r) { return r.prop(&P::carbon); });
    add("hydrogen", C::SurfaceChemistry, "H", {"hydrogen"}, [](const RowInputs& r) { return r.prop(&P::hydrogen); });
    add("vitrinite", C::SurfaceChemistry, "vitrinite", {"vitrinite"}, [](const RowInputs& r) { return r.prop(&P::vitrinite); });
    add("inertinite", C::SurfaceChemistry, "inertinite", {"inertinite"},
        [](const RowInputs& r) { return r.prop(&P::inertinite); });
    add("pyrite_toc_ratio", C::SurfaceChemistry, "pyrite / TOC", {"mineral_pyrite", "toc"},
        [](const RowInputs& r) { return ratio(r.mineral("pyrite"), r.prop(&P::toc)); });
    add("maturity_index", C::SurfaceChemistry, "FC / (FC + VM)", {"fixed_carbon", "volatile_matter"},
        [](const RowInputs& r) {
          return ratio(r.prop(&P::fixed_carbon), r.prop(&P::fixed_carbon) + r.prop(&P::volatile_matter));
        });
    add("fuel_ratio", C::SurfaceChemistry, "FC / VM", {"fixed_carbon", "volatile_matter"},
        [](const RowInputs& r) { return ratio(r.prop(&P::fixed_carbon), r.prop(&P::volatile_matter)); });
    add("ch_atomic_ratio", C::SurfaceChemistry, "(C / 12.011) / (H / 1.008)", {"carbon", "hydrogen"},
        [](const RowInputs& r) { return ratio(r.prop(&P::carbon) / 12.011, r.prop(&P::hydrogen) / 1.008); });
    add("vitrinite_inertinite_ratio", C::SurfaceChemistry, "vitrinite / inertinite", {"vitrinite", "inertinite"},
        [](const RowInputs& r) { return ratio(r.prop(&P::vitrinite), r.prop(&P::inertinite)); });
    add("log_ro", C::SurfaceChemistry, "ln %Ro", {"vitrinite_reflectance"},
        [](const RowInputs& r) { return safe_log(r.prop(&P::vitrinite_reflectance)); });
    // interactions
    add("surface_area_x_T", C::Interaction, "S_BET T", {"surface_area", "temperature"},
        [](const RowInputs& r) { return r.prop(&P::surface_area) * r.T; });
    add("p_x_pore_volume", C::Interaction, "p V_total", {"pressure", "pore_volume"},
        [](const RowInputs& r) { return r.p * r.prop(&P::pore_volume); });
    add("micropore_fraction_x_T", C::Interaction, "(V_micro / V_total) T", {"micropore_volume", "pore_volume", "temperature"},
        [](const RowInputs& r) { return ratio(r.prop(&P::micropore_volume), r.prop(&P::pore_volume)) * r.T; });
    add("adsorption_driving_force", C::Interaction, "p S_BET / T", {"pressure", "surface_area", "temperature"},
        [](const RowInputs& r) { return r.p * r.prop(&P::surface_area) / r.T; });
    add("henry_approx", C::Interaction, "S_BET p / T", {"surface_area", "pressure", "temperature"},
        [](const RowInputs& r) { return r.prop(&P::surface_area) * r.p / r.T; });
    // kinetic, unit proportionality constants
    add("knudsen_diffusivity", C::Kinetic, "d_pore sqrt(T)", {"avg_pore_diameter", "temperature"},
        [](const RowInputs& r) { return r.prop(&P::avg_pore_diameter) * std::sqrt(r.T); });
    add("mean_free_path", C::Kinetic, "T / max(p, 1e-6)", {"temperature", "pressure"},
        [](const RowInputs& r) { return r.T / std::max(r.p, kPressureFloor); });
    add("diffusion_time", C::Kinetic, "d_pore^2 / D_K", {"avg_pore_diameter", "temperature"},
        [](const RowInputs& r) {
          const double d = r.prop(&P::avg_pore_diameter);
          return ratio(d * d, d * std::sqrt(r.T));
        });
    // molecular sieving
    add("sieving_factor", C::Sieving, "min(1, d_pore / 0.289)", {"avg_pore_diameter"},
        [](const RowInputs& r) {
          const double d = r.prop(&P::avg_pore_diameter);
          return std::isnan(d) ? kNaN : std::min(1.0, d / kH2Diameter);
        });
    add("pore_accessibility", C::Sieving, "(d_pore - 0.289) / d_pore if d_pore > 0.289 else 0", {"avg_pore_diameter"},
        [](const RowInputs& r) {
          const double d = r.prop(&P::avg_pore_diameter);
          if (std::isnan(d)) return kNaN;
          return d > kH2Diameter ? (d - kH2Diameter) / d : 0.0;
        });
    add("ultramicropore", C::Sieving, "1[d_pore < 0.7]", {"avg_pore_diameter"},
        [](const RowInputs& r) {
          const double d = r.prop(&P::avg_pore_diameter);
          return indicator(d, d < 0.7);
        });
    add("supermicropore", C::Sieving, "1[0.7 <= d_pore < 2]", {"avg_pore_diameter"},
        [](const RowInputs& r) {
          const double d = r.prop(&P::avg_pore_diameter);
          return indicator(d, d >= 0.7 && d < 2.0);
        });
    // classical-model basis terms
    add("langmuir_term", C::ClassicalInspired, "p / (1 + p)", {"pressure"}, [](const RowInputs& r) { return r.p / (1.0 + r.p); });
    add("freundlich_term", C::ClassicalInspired, "p^(1/n), n per lithology", {"pressure", "lithology"},
        [](const RowInputs& r) {
          return std::pow(r.p, r.ctx->freundlich_exponent[static_cast<std::size_t>(r.lith)]);
        });
    add("temkin_term", C::ClassicalInspired, "ln(1 + p)", {"pressure"}, [](const RowInputs& r) { return std::log1p(r.p); });
    return v;
  }();
  return f;
}

const Formula* find_formula(const std::string& name) {
  for (const auto& f : formulas())
    if (name == f.name) return &f;
  return nullptr;
}

std::vector<double> finite_values(const Matrix& X, Eigen::Index c) {
  std::vector<double> v;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    if (std::isfinite(X(i, c))) v.push_back(X(i, c));
  return v;
}

// Ranks (1 = best) by descending score, ties to the lower column index.
std::vector<int> rank_desc(const std::vector<double>& score) {
  std::vector<std::size_t> order(score.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  std::vector<int> r(score.size());
  for (std::size_t i = 0; i < order.size(); ++i) r[order[i]] = static_cast<int>(i) + 1;
  return r;
}

double average_path_c(double n) {
  if (n <= 1.0) return 0.0;
  if (n <= 2.0) return 1.0;
  constexpr double kEulerGamma = 0.5772156649015329;
  return 2.0 * (std::log(n - 1.0) + kEulerGamma) - 2.0 * (n - 1.0) / n;
}

struct IsoNode {
  int feature = -1;
  double split = 0.0;
  int left = -1, right = -1;
  std::size_t size = 0;
};

int build_iso(std::vector<IsoNode>& nodes, const Matrix& X, std::vector<Eigen::Index>& idx, int depth, int max_depth,
              Rng& rng) {
  const int id = static_cast<int>(nodes.size());
  nodes.push_back({});
  nodes[id].size = idx.size();
  if (depth >= max_depth || idx.size() <= 1) return id;
  std::vector<std::pair<Eigen::Index, std::pair<double, double>>> spread;
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    double lo = X(idx[0], c), hi = lo;
    for (auto i : idx) lo = std::min(lo, X(i, c)), hi = std::max(hi, X(i, c));
    if (hi > lo) spread.push_back({c, {lo, hi}});
  }
  if (spread.empty()) return id;
  const auto& [c, range] = spread[uniform_index(rng, spread.size())];
  const double s = uniform(rng, range.first, range.second);
  std::vector<Eigen::Index> l, r;
  for (auto i : idx) (X(i, c) < s ? l : r).push_back(i);
  if (l.empty() || r.empty()) return id;
  nodes[id].feature = static_cast<int>(c);
  nodes[id].split = s;
  const int li = build_iso(nodes, X, l, depth + 1, max_depth, rng);
  const int ri = build_iso(nodes, X, r, depth + 1, max_depth, rng);
  nodes[id].left = li;
  nodes[id].right = ri;
  return id;
}

double iso_path(const std::vector<IsoNode>& nodes, const Matrix& X, Eigen::Index row) {
  int k = 0;
  double h = 0.0;
  while (nodes[k].feature >= 0) {
    k = X(row, nodes[k].feature) < nodes[k].split ? nodes[k].left : nodes[k].right;
    h += 1.0;
  }
  return h + average_path_c(static_cast<double>(nodes[k].size));
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_cell(std::string_view s) {
  if (s.empty()) return kNaN;
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error(Errc::ParseError, "bad numeric cell '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

nlohmann::json nan_to_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double null_to_nan(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

}  // namespace

std::string_view to_string(Category c) noexcept {
  switch (c) {
    case Category::Thermodynamic: return "thermodynamic";
    case Category::PoreStructure: return "pore_structure";
    case Category::SurfaceChemistry: return "surface_chemistry";
    case Category::Interaction: return "interaction";
    case Category::Kinetic: return "kinetic";
    case Category::Sieving: return "molecular_sieving";
    case Category::ClassicalInspired: return "classical_inspired";
  }
  return "?";
}

std::size_t FeatureCatalog::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].name == name) return i;
  throw Error(Errc::InvalidArgument, "unknown feature '" + name + "'");
}

FeatureCatalog build_catalog(const std::vector<std::string>& minerals, bool include_target_derived) {
  FeatureCatalog cat;
  for (const auto& f : formulas()) {
    if (f.uses_target && !include_target_derived) continue;
    cat.entries.push_back({f.name, f.cat, f.text, f.inputs, f.uses_target});
  }
  std::vector<std::string> ms;
  for (const auto& m : minerals) ms.push_back(data::normalize_key(m));
  std::sort(ms.begin(), ms.end());
  ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
  for (const auto& m : ms) {
    const std::string name = "mineral_" + m;
    cat.entries.push_back({name, Category::SurfaceChemistry, m + " wt%", {name}, false});
  }
  return cat;
}

FeatureContext estimate_context(const std::vector<data::IsothermRecord>& records, std::uint64_t seed) {
  FeatureContext ctx;
  for (std::size_t l = 0; l < 3; ++l) {
    std::vector<iso::IsothermPoint> pts;
    for (const auto& r : records)
      if (r.lithology == data::kLithologies[l]) pts.push_back({r.pressure, r.temperature, r.uptake});
    if (pts.size() < 3) continue;
    fit::FitOptions o;
    o.de.seed = derive_seed(seed, l);
    const auto m = fit::fit_sample(pts, iso::FormId::Freundlich, o);
    ctx.freundlich_exponent[l] = 1.0 / m.params.values[1];
  }
  return ctx;
}

std::size_t FeatureMatrix::column(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw Error(Errc::InvalidArgument, "no feature column '" + name + "'");
}

FeatureMatrix FeatureMatrix::select_rows(const std::vector<std::size_t>& rows) const {
  FeatureMatrix out;
  out.names = names;
  out.categories = categories;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
  out.imputed.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows.at(i));
    if (r >= values.rows()) throw Error(Errc::InvalidArgument, "row index out of range");
    out.values.row(static_cast<Eigen::Index>(i)) = values.row(r);
    out.imputed.row(static_cast<Eigen::Index>(i)) = imputed.row(r);
    out.sample_keys.push_back(sample_keys[rows[i]]);
    out.lithology.push_back(lithology[rows[i]]);
    out.pressure.push_back(pressure[rows[i]]);
    out.temperature.push_back(temperature[rows[i]]);
    out.target.push_back(target[rows[i]]);
  }
  return out;
}

FeatureMatrix FeatureMatrix::select_columns(const std::vector<std::string>& cols) const {
  FeatureMatrix out = *this;
  out.names = cols;
  out.categories.clear();
  out.values.resize(values.rows(), static_cast<Eigen::Index>(cols.size()));
  out.imputed.resize(values.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto c = static_cast<Eigen::Index>(column(cols[j]));
    out.categories.push_back(categories[static_cast<std::size_t>(c)]);
    out.values.col(static_cast<Eigen::Index>(j)) = values.col(c);
    out.imputed.col(static_cast<Eigen::Index>(j)) = imputed.col(c);
  }
  return out;
}

std::vector<double> engineer_row(const data::IntegratedRecord& rec, const FeatureCatalog& catalog,
                                 const FeatureContext& ctx) {
  if (!rec.pressure || !rec.temperature)
    throw Error(Errc::MissingThermoInputs, "record '" + rec.sample_key + "' lacks pressure or temperature");
  RowInputs in;
  in.p = *rec.pressure;
  in.T = *rec.temperature;
  in.q = rec.uptake.value_or(kNaN);
  in.lith = rec.lithology;
  in.props = rec.properties ? &*rec.properties : nullptr;
  in.ctx = &ctx;
  std::vector<double> row;
  row.reserve(catalog.entries.size());
  for (const auto& e : catalog.entries) {
    if (const auto* f = find_formula(e.name)) {
      row.push_back(f->fn(in));
    } else if (e.name.rfind("mineral_", 0) == 0) {
      double v = kNaN;
      if (in.props)
        for (const auto& [k, val] : in.props->mineral_fractions)
          if ("mineral_" + data::normalize_key(k) == e.name) v = val;
      row.push_back(v);
    } else {
      throw Error(Errc::InvalidArgument, "catalog entry without a formula: " + e.name);
    }
    if (!std::isfinite(row.back())) row.back() = kNaN;
  }
  return row;
}

FeatureMatrix engineer_features(const std::vector<data::IntegratedRecord>& records, const FeatureCatalog& catalog,
                                const FeatureContext& ctx) {
  FeatureMatrix m;
  for (const auto& e : catalog.entries) {
    m.names.push_back(e.name);
    m.categories.push_back(e.category);
  }
  std::vector<const data::IntegratedRecord*> rows;
  for (const auto& r : records)
    if (r.has_isotherm()) rows.push_back(&r);
  m.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(catalog.entries.size()));
  m.imputed = Mask::Constant(m.values.rows(), m.values.cols(), false);
  m.sample_keys.resize(rows.size());
  m.lithology.resize(rows.size());
  m.pressure.resize(rows.size());
  m.temperature.resize(rows.size());
  m.target.resize(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    const auto& r = *rows[i];
    const auto v = engineer_row(r, catalog, ctx);
    for (std::size_t j = 0; j < v.size(); ++j) m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
    m.sample_keys[i] = r.sample_key;
    m.lithology[i] = r.lithology;
    m.pressure[i] = *r.pressure;
    m.temperature[i] = *r.temperature;
    m.target[i] = r.uptake.value_or(kNaN);
  });
  return m;
}

Imputer fit_imputer(const FeatureMatrix& train) {
  if (train.rows() == 0) throw Error(Errc::EmptyInput, "imputer needs rows");
  Imputer imp;
  std::vector<Eigen::Index> keep;
  const double n = static_cast<double>(train.rows());
  for (std::size_t c = 0; c < train.cols(); ++c) {
    const auto col = static_cast<Eigen::Index>(c);
    const auto obs = finite_values(train.values, col);
    if (obs.empty()) {
      imp.dropped.push_back(train.names[c]);
      continue;
    }
    keep.push_back(col);
    imp.names.push_back(train.names[c]);
    const double miss = 1.0 - static_cast<double>(obs.size()) / n;
    imp.tier.push_back(miss == 0.0 ? ImputeTier::None : miss < 0.10 ? ImputeTier::Knn : ImputeTier::LithologyMedian);
    std::array<double, 3> med{0.0, 0.0, 0.0};
    for (std::size_t l = 0; l < 3; ++l) {
      std::vector<double> v;
      for (std::size_t i = 0; i < train.rows(); ++i)
        if (train.lithology[i] == data::kLithologies[l] && std::isfinite(train.values(static_cast<Eigen::Index>(i), col)))
          v.push_back(train.values(static_cast<Eigen::Index>(i), col));
      if (!v.empty()) med[l] = stats::median(v);
    }
    imp.lith_median.push_back(med);
    if (train.categories[c] == Category::Thermodynamic && miss == 0.0) {
      imp.distance_columns.push_back(imp.names.size() - 1);
      auto [q1, q2, q3] = stats::quartiles(obs);
      imp.distance_center.push_back(q2);
      imp.distance_scale.push_back(q3 - q1 > 0.0 ? q3 - q1 : 1.0);
    }
  }
  if (imp.names.empty()) throw Error(Errc::AllMissingColumn, "every feature column is entirely missing");
  imp.reference = train.values(Eigen::all, keep);
  return imp;
}

FeatureMatrix Imputer::apply(const FeatureMatrix& m) const {
  FeatureMatrix out = m.select_columns(names);
  const auto nref = reference.rows();
  std::vector<double> dist(static_cast<std::size_t>(nref));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(nref));
  for (Eigen::Index i = 0; i < out.values.rows(); ++i) {
    bool any_missing = false;
    for (Eigen::Index c = 0; c < out.values.cols(); ++c) any_missing |= std::isnan(out.values(i, c));
    if (!any_missing) continue;
    bool have_dist = false;
    for (Eigen::Index c = 0; c < out.values.cols(); ++c) {
      if (!std::isnan(out.values(i, c))) continue;
      const auto cu = static_cast<std::size_t>(c);
      const auto lith = static_cast<std::size_t>(out.lithology[static_cast<std::size_t>(i)]);
      double fill = lith_median[cu][lith];
      if (tier[cu] != ImputeTier::LithologyMedian) {
        if (!have_dist) {
          for (Eigen::Index r = 0; r < nref; ++r) {
            double d2 = 0.0;
            for (std::size_t k2 = 0; k2 < distance_columns.size(); ++k2) {
              const auto dc = static_cast<Eigen::Index>(distance_columns[k2]);
              const double a = (out.values(i, dc) - distance_center[k2]) / distance_scale[k2];
              const double b = (reference(r, dc) - distance_center[k2]) / distance_scale[k2];
              d2 += (a - b) * (a - b);
            }
            dist[static_cast<std::size_t>(r)] = std::isnan(d2) ? std::numeric_limits<double>::infinity() : d2;
          }
          std::iota(order.begin(), order.end(), 0);
          std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
            return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)];
          });
          have_dist = true;
        }
        double s = 0.0;
        int got = 0;
        for (auto r : order) {
          if (got == k) break;
          if (std::isnan(reference(r, c))) continue;
          s += reference(r, c);
          ++got;
        }
        if (got > 0) fill = s / got;
      }
      out.values(i, c) = fill;
      out.imputed(i, c) = true;
    }
  }
  return out;
}

std::vector<double> isolation_scores(const Matrix& X, std::uint64_t seed, int n_trees) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (n == 0) return {};
  const std::size_t psi = std::min<std::size_t>(256, n);
  const int max_depth = static_cast<int>(std::ceil(std::log2(std::max<double>(2.0, static_cast<double>(psi)))));
  std::vector<std::vector<double>> paths(static_cast<std::size_t>(n_trees), std::vector<double>(n));
  parallel_for(static_cast<std::size_t>(n_trees), [&](std::size_t t) {
    Rng rng = make_rng(derive_seed(seed, t));
    std::vector<Eigen::Index> all(n);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < psi; ++i) std::swap(all[i], all[i + uniform_index(rng, n - i)]);
    all.resize(psi);
    std::vector<IsoNode> nodes;
    build_iso(nodes, X, all, 0, max_depth, rng);
    for (std::size_t i = 0; i < n; ++i) paths[t][i] = iso_path(nodes, X, static_cast<Eigen::Index>(i));
  });
  const double cpsi = average_path_c(static_cast<double>(psi));
  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) {
    double h = 0.0;
    for (const auto& p : paths) h += p[i];
    h /= static_cast<double>(n_trees);
    score[i] = cpsi > 0.0 ? std::pow(2.0, -h / cpsi) : 0.5;
  }
  return score;
}

OutlierReport detect_outliers(const FeatureMatrix& m, std::uint64_t seed) {
  const std::size_t n = m.rows();
  OutlierReport rep;
  rep.univariate.assign(n, false);
  rep.multivariate.assign(n, false);
  rep.action.assign(n, OutlierAction::Keep);
  for (std::size_t c = 0; c < m.cols(); ++c) {
    const auto col = static_cast<Eigen::Index>(c);
    auto v = finite_values(m.values, col);
    if (v.empty()) {
      rep.p01.push_back(kNaN);
      rep.p99.push_back(kNaN);
      continue;
    }
    std::sort(v.begin(), v.end());
    rep.p01.push_back(stats::quantile_sorted(v, 0.01));
    rep.p99.push_back(stats::quantile_sorted(v, 0.99));
    const double q1 = stats::quantile_sorted(v, 0.25), q3 = stats::quantile_sorted(v, 0.75), iqr = q3 - q1;
    if (!(iqr > 0.0)) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = m.values(static_cast<Eigen::Index>(i), col);
      if (x < q1 - kFenceMultiplier * iqr || x > q3 + kFenceMultiplier * iqr) rep.univariate[i] = true;
    }
  }
  if (n == 0) return rep;
  Matrix X = m.values;
  for (Eigen::Index c = 0; c < X.cols(); ++c)
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      if (!std::isfinite(X(i, c))) X(i, c) = rep.p01[static_cast<std::size_t>(c)];
  rep.isolation_score = isolation_scores(X, seed);
  const auto n_flag = static_cast<std::size_t>(std::ceil(kContamination * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rep.isolation_score[a] > rep.isolation_score[b]; });
  // All-identical rows have identical scores; nothing stands out.
  const bool flat = std::all_of(rep.isolation_score.begin(), rep.isolation_score.end(),
                                [&](double s) { return s == rep.isolation_score[0]; });
  if (!flat)
    for (std::size_t i = 0; i < n_flag; ++i) rep.multivariate[order[i]] = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (rep.univariate[i] && rep.multivariate[i]) rep.action[i] = OutlierAction::Exclude;
    else if (rep.univariate[i] || rep.multivariate[i]) rep.action[i] = OutlierAction::Winsorize;
  }
  return rep;
}

FeatureMatrix apply_outliers(const FeatureMatrix& m, const OutlierReport& r) {
  if (r.action.size() != m.rows()) throw Error(Errc::LengthMismatch, "outlier report does not match the matrix");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < m.rows(); ++i)
    if (r.action[i] != OutlierAction::Exclude) keep.push_back(i);
  FeatureMatrix out = m.select_rows(keep);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const std::size_t i = keep[k];
    if (r.action[i] != OutlierAction::Winsorize) continue;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      double& x = out.values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
      if (!std::isfinite(x) || std::isnan(r.p01[c])) continue;
      if (r.univariate[i] && !r.multivariate[i]) {
        // only the columns that broke a fence
        auto v = finite_values(m.values, static_cast<Eigen::Index>(c));
        std::sort(v.begin(), v.end());
        const double q1 = stats::quantile_sorted(v, 0.25), q3 = stats::quantile_sorted(v, 0.75), iqr = q3 - q1;
        if (!(iqr > 0.0) || (x >= q1 - kFenceMultiplier * iqr && x <= q3 + kFenceMultiplier * iqr)) continue;
      }
      x = std::clamp(x, r.p01[c], r.p99[c]);
    }
  }
  return out;
}

ScalerParams fit_scaler(const FeatureMatrix& m) {
  ScalerParams s;
  s.names = m.names;
  for (std::size_t c = 0; c < m.cols(); ++c) {
    const auto v = finite_values(m.values, static_cast<Eigen::Index>(c));
    if (v.empty()) {
      s.median.push_back(0.0);
      s.iqr.push_back(0.0);
      s.constant.push_back(true);
      continue;
    }
    auto [q1, q2, q3] = stats::quartiles(v);
    s.median.push_back(q2);
    s.iqr.push_back(q3 - q1);
    s.constant.push_back(!(q3 - q1 > 0.0));
  }
  return s;
}

FeatureMatrix ScalerParams::transform(const FeatureMatrix& m) const {
  FeatureMatrix out = m.select_columns(names);
  for (std::size_t c = 0; c < names.size(); ++c) {
    auto col = out.values.col(static_cast<Eigen::Index>(c)).array();
    col -= median[c];
    if (!constant[c]) col /= iqr[c];
  }
  return out;
}

FeatureMatrix ScalerParams::inverse(const FeatureMatrix& m) const {
  FeatureMatrix out = m.select_columns(names);
  for (std::size_t c = 0; c < names.size(); ++c) {
    auto col = out.values.col(static_cast<Eigen::Index>(c)).array();
    if (!constant[c]) col *= iqr[c];
    col += median[c];
  }
  return out;
}

double mutual_information(const std::vector<double>& x, const std::vector<double>& y, int bins) {
  if (x.size() != y.size()) throw Error(Errc::LengthMismatch, "mutual information inputs differ in length");
  const std::size_t n = x.size();
  if (n == 0) return 0.0;
  auto binning = [&](const std::vector<double>& v) {
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    std::vector<double> edges;
    for (int j = 1; j < bins; ++j) edges.push_back(stats::quantile_sorted(s, static_cast<double>(j) / bins));
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    std::vector<int> b(n);
    for (std::size_t i = 0; i < n; ++i)
      b[i] = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), v[i]) - edges.begin());
    return b;
  };
  const auto bx = binning(x), by = binning(y);
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> px, py;
  for (std::size_t i = 0; i < n; ++i) {
    joint[{bx[i], by[i]}] += 1.0;
    px[bx[i]] += 1.0;
    py[by[i]] += 1.0;
  }
  const double nn = static_cast<double>(n);
  double mi = 0.0;
  for (const auto& [k, c] : joint) mi += c / nn * std::log(c * nn / (px[k.first] * py[k.second]));
  return std::max(0.0, mi);
}

SelectionResult select_features(const FeatureMatrix& m, int k, std::uint64_t seed) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < m.rows(); ++i)
    if (std::isfinite(m.target[i])) rows.push_back(i);
  if (rows.size() < 50) throw Error(Errc::InsufficientData, "feature selection needs at least 50 labelled rows");
  const std::size_t d = m.cols();
  Matrix X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  baselines::Vector y(static_cast<Eigen::Index>(rows.size()));
  std::vector<double> yv;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    X.row(static_cast<Eigen::Index>(r)) = m.values.row(static_cast<Eigen::Index>(rows[r]));
    y[static_cast<Eigen::Index>(r)] = m.target[rows[r]];
    yv.push_back(m.target[rows[r]]);
  }
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    const auto v = finite_values(X, c);
    const double fill = v.empty() ? 0.0 : stats::median(v);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      if (!std::isfinite(X(i, c))) X(i, c) = fill;
  }
  const double nr = static_cast<double>(rows.size());
  std::vector<double> pear(d), mi(d), fstat(d);
  for (std::size_t c = 0; c < d; ++c) {
    std::vector<double> xv(X.col(static_cast<Eigen::Index>(c)).data(), X.col(static_cast<Eigen::Index>(c)).data() + X.rows());
    double r = stats::pearson(xv, yv);
    if (!std::isfinite(r)) r = 0.0;
    pear[c] = std::abs(r);
    const double r2 = r * r;
    fstat[c] = r2 >= 1.0 ? std::numeric_limits<double>::infinity() : r2 / (1.0 - r2) * (nr - 2.0);
    mi[c] = mutual_information(xv, yv);
  }
  const auto forest = baselines::fit_forest(X, y, 100, 10, seed);
  std::vector<double> imp(forest.importances.data(), forest.importances.data() + forest.importances.size());

  SelectionResult res;
  res.names = m.names;
  res.rank = {rank_desc(pear), rank_desc(mi), rank_desc(imp), rank_desc(fstat)};
  res.votes.assign(d, 0);
  std::vector<double> mean_rank(d, 0.0);
  for (std::size_t c = 0; c < d; ++c)
    for (const auto& r : res.rank) {
      res.votes[c] += r[c] <= k;
      mean_rank[c] += r[c] / 4.0;
    }
  std::vector<std::size_t> cand;
  for (std::size_t c = 0; c < d; ++c)
    if (res.votes[c] >= 3) cand.push_back(c);
  std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) { return mean_rank[a] < mean_rank[b]; });
  if (cand.size() > static_cast<std::size_t>(k)) cand.resize(static_cast<std::size_t>(k));
  for (auto c : cand) res.selected.push_back(m.names[c]);
  return res;
}

nlohmann::json to_json(const FeatureCatalog& c) {
  nlohmann::json arr = nlohmann::json::array();
  std::map<std::string, int> per_cat;
  for (const auto& e : c.entries) {
    arr.push_back({{"name", e.name},
                   {"category", std::string(to_string(e.category))},
                   {"formula", e.formula},
                   {"inputs", e.inputs},
                   {"uses_target", e.uses_target}});
    ++per_cat[std::string(to_string(e.category))];
  }
  return {{"count", c.entries.size()}, {"per_category", per_cat}, {"entries", arr}};
}

nlohmann::json to_json(const Imputer& imp) {
  nlohmann::json tiers = nlohmann::json::array(), ref = nlohmann::json::array();
  for (auto t : imp.tier) tiers.push_back(t == ImputeTier::None ? "none" : t == ImputeTier::Knn ? "knn" : "lithology_median");
  for (Eigen::Index i = 0; i < imp.reference.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < imp.reference.cols(); ++c) row.push_back(nan_to_null(imp.reference(i, c)));
    ref.push_back(row);
  }
  return {{"k", Imputer::k},
          {"names", imp.names},
          {"dropped", imp.dropped},
          {"tier", tiers},
          {"lithology_median", imp.lith_median},
          {"distance_columns", imp.distance_columns},
          {"distance_center", imp.distance_center},
          {"distance_scale", imp.distance_scale},
          {"reference", ref}};
}

Imputer imputer_from_json(const nlohmann::json& j) {
  try {
    Imputer imp;
    imp.names = j.at("names").get<std::vector<std::string>>();
    imp.dropped = j.at("dropped").get<std::vector<std::string>>();
    for (const auto& t : j.at("tier")) {
      const auto s = t.get<std::string>();
      imp.tier.push_back(s == "none" ? ImputeTier::None : s == "knn" ? ImputeTier::Knn : ImputeTier::LithologyMedian);
    }
    imp.lith_median = j.at("lithology_median").get<std::vector<std::array<double, 3>>>();
    imp.distance_columns = j.at("distance_columns").get<std::vector<std::size_t>>();
    imp.distance_center = j.at("distance_center").get<std::vector<double>>();
    imp.distance_scale = j.at("distance_scale").get<std::vector<double>>();
    const auto& ref = j.at("reference");
    imp.reference.resize(static_cast<Eigen::Index>(ref.size()), static_cast<Eigen::Index>(imp.names.size()));
    for (std::size_t i = 0; i < ref.size(); ++i)
      for (std::size_t c = 0; c < imp.names.size(); ++c)
        imp.reference(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = null_to_nan(ref[i].at(c));
    if (imp.tier.size() != imp.names.size() || imp.lith_median.size() != imp.names.size())
      throw Error(Errc::ParseError, "imputer arrays differ in length");
    return imp;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("imputer: ") + e.what());
  }
}

nlohmann::json to_json(const ScalerParams& s) {
  return {{"names", s.names}, {"median", s.median}, {"iqr", s.iqr}, {"constant", s.constant}};
}

ScalerParams scaler_from_json(const nlohmann::json& j) {
  try {
    ScalerParams s;
    s.names = j.at("names").get<std::vector<std::string>>();
    s.median = j.at("median").get<std::vector<double>>();
    s.iqr = j.at("iqr").get<std::vector<double>>();
    s.constant = j.at("constant").get<std::vector<bool>>();
    if (s.median.size() != s.names.size() || s.iqr.size() != s.names.size() || s.constant.size() != s.names.size())
      throw Error(Errc::ParseError, "scaler arrays differ in length");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("scaler: ") + e.what());
  }
}

nlohmann::json to_json(const SelectionResult& s) {
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t c = 0; c < s.names.size(); ++c) {
    nlohmann::json e{{"name", s.names[c]}, {"votes", s.votes[c]}};
    for (std::size_t k = 0; k < 4; ++k) e[std::string("rank_") + kSelectionMethods[k]] = s.rank[k][c];
    per.push_back(e);
  }
  return {{"selected", s.selected}, {"features", per}};
}

nlohmann::json to_json(const FeatureContext& c) { return {{"freundlich_exponent", c.freundlich_exponent}}; }

FeatureContext context_from_json(const nlohmann::json& j) {
  try {
    FeatureContext c;
    c.freundlich_exponent = j.at("freundlich_exponent").get<std::array<double, 3>>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("feature context: ") + e.what());
  }
}

std::string to_csv(const FeatureMatrix& m) {
  std::ostringstream os;
  os << "sample_key,lithology,pressure_bar,temperature_K,target";
  for (const auto& n : m.names) os << ',' << n;
  os << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    os << m.sample_keys[i] << ',' << data::to_string(m.lithology[i]) << ',' << fmt_double(m.pressure[i]) << ','
       << fmt_double(m.temperature[i]) << ',' << fmt_double(m.target[i]);
    for (std::size_t c = 0; c < m.cols(); ++c)
      os << ',' << fmt_double(m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
    os << '\n';
  }
  return os.str();
}

FeatureMatrix matrix_from_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto pos = text.find('\n', start);
    auto line = text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  if (lines.empty()) throw Error(Errc::EmptyFile, "feature CSV is empty");
  const auto header = split_commas(lines[0]);
  if (header.size() < 5 || header[0] != "sample_key" || header[1] != "lithology" || header[4] != "target")
    throw Error(Errc::MissingColumn, "feature CSV header must start with sample_key,lithology,pressure_bar,temperature_K,target");
  const auto full = build_catalog({}, true);
  FeatureMatrix m;
  for (std::size_t c = 5; c < header.size(); ++c) {
    m.names.emplace_back(header[c]);
    Category cat = Category::SurfaceChemistry;  // mineral columns
    for (const auto& e : full.entries)
      if (e.name == header[c]) cat = e.category;
    m.categories.push_back(cat);
  }
  const auto n = lines.size() - 1;
  m.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m.names.size()));
  m.imputed = Mask::Constant(m.values.rows(), m.values.cols(), false);
  for (std::size_t i = 0; i < n; ++i) {
    const auto cells = split_commas(lines[i + 1]);
    if (cells.size() != header.size())
      throw Error(Errc::ParseError, "feature CSV row " + std::to_string(i + 1) + " has the wrong cell count");
    m.sample_keys.emplace_back(cells[0]);
    const auto lith = data::parse_lithology(cells[1]);
    if (!lith) throw Error(Errc::ParseError, "unknown lithology '" + std::string(cells[1]) + "'");
    m.lithology.push_back(*lith);
    m.pressure.push_back(parse_cell(cells[2]));
    m.temperature.push_back(parse_cell(cells[3]));
    m.target.push_back(parse_cell(cells[4]));
    for (std::size_t c = 5; c < cells.size(); ++c)
      m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c - 5)) = parse_cell(cells[c]);
  }
  return m;
}

}  // namespace sorbfit::features
