#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sorbfit/acceptance.hpp"
#include "sorbfit/data_core.hpp"
#include "sorbfit/error.hpp"
#include "sorbfit/evalx.hpp"
#include "sorbfit/features.hpp"
#include "sorbfit/fit_engine.hpp"
#include "sorbfit/parallel.hpp"
#include "sorbfit/pinn.hpp"
#include "sorbfit/pipeline.hpp"
#include "sorbfit/synth.hpp"
#include "sorbfit/thermo.hpp"
#include "sorbfit/uq.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sorbfit;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitInternal = 3;

// ------------------------------------------------------------------ io

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json read_json(const fs::path& p) {
  const auto text = read_text(p);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(Errc::Io, "write failed: " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

void copy_into(const fs::path& src, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / src.filename(), read_text(src));
}

/// --out may name a directory or a single .json/.csv file; in the latter case
/// the effective config lands next to it as <stem>.config.json.
struct OutTarget {
  fs::path file;  // empty for a directory target
  fs::path dir;
  fs::path config;
};

OutTarget out_target(const std::string& out, const std::string& default_name) {
  OutTarget t;
  const fs::path p(out);
  if (p.extension() == ".json" || p.extension() == ".csv") {
    t.file = p;
    t.dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
    t.config = t.dir / (p.stem().string() + ".config.json");
  } else {
    t.dir = p;
    t.file = p / default_name;
    t.config = p / "config.json";
  }
  fs::create_directories(t.dir);
  return t;
}

void echo_config(const fs::path& path, const std::string& command, const json& config) {
  write_json(path, {{"tool", "sorbfit"}, {"version", SORBFIT_VERSION}, {"command", command}, {"config", config}});
}

// ------------------------------------------------------------------ common options

struct Common {
  std::uint64_t seed = 42;
  bool seed_given = false;
};

std::uint64_t resolve_seed(const Common& c) {
  if (c.seed_given) return c.seed;
  if (const char* env = std::getenv("SORBFIT_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw Error(Errc::InvalidArgument, std::string("SORBFIT_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  return 42;
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& what) {
  if (!j.is_object()) throw Error(Errc::InvalidArgument, what + " must be a JSON object");
  for (const auto& [k, _] : j.items())
    if (!allowed.count(k)) throw Error(Errc::InvalidArgument, "unknown key '" + k + "' in " + what);
}

QmaxTable qmax_from_json(const json& j) {
  reject_unknown(j, {"clay", "shale", "coal"}, "qmax");
  QmaxTable q;
  try {
    q.clay = j.value("clay", q.clay);
    q.shale = j.value("shale", q.shale);
    q.coal = j.value("coal", q.coal);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("qmax: ") + e.what());
  }
  if (!(q.clay > 0 && q.shale > 0 && q.coal > 0)) throw Error(Errc::InvalidArgument, "qmax values must be positive");
  return q;
}

json to_json(const QmaxTable& q) { return {{"clay", q.clay}, {"shale", q.shale}, {"coal", q.coal}}; }

struct Corpus {
  std::vector<data::IsothermRecord> isotherms;
  std::vector<data::SamplePropertySet> properties;
};

Corpus read_corpus(const fs::path& dir, bool need_properties) {
  Corpus c;
  auto iso = data::ingest_isotherms(dir / "isotherms.csv");
  if (!iso.rejects.empty())
    throw Error(Errc::ParseError, (dir / "isotherms.csv").string() + " has " + std::to_string(iso.rejects.size()) +
                                      " invalid rows; run ingest first");
  c.isotherms = std::move(iso.records);
  if (need_properties || fs::exists(dir / "properties.csv")) {
    auto props = data::ingest_properties(dir / "properties.csv");
    c.properties = std::move(props.records);
  }
  return c;
}

data::SplitAssignment split_for(const fs::path& dir, const Corpus& c, std::uint64_t seed) {
  if (fs::exists(dir / "split.json")) return data::split_from_json(read_json(dir / "split.json"));
  std::vector<std::pair<std::string, data::Lithology>> keys;
  std::set<std::string> seen;
  for (const auto& r : c.isotherms)
    if (seen.insert(r.sample_key).second) keys.push_back({r.sample_key, r.lithology});
  return data::stratified_split(keys, {}, seed);
}

std::vector<iso::FormId> parse_forms(const std::string& s) {
  if (s == "all") return iso::all_forms();
  if (s == "classical") return iso::classical_forms();
  if (s == "individual") return iso::individual_forms();
  std::vector<iso::FormId> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto f = iso::parse_form(tok);
    if (!f) throw Error(Errc::InvalidArgument, "unknown form '" + tok + "'");
    out.push_back(*f);
  }
  if (out.empty()) throw Error(Errc::InvalidArgument, "no forms given");
  return out;
}

// ------------------------------------------------------------------ synth

int cmd_synth(const Common& common, const std::string& spec_arg, const std::string& out) {
  synth::PopulationSpec spec;
  if (spec_arg != "default") spec = synth::spec_from_json(read_json(spec_arg));
  if (common.seed_given || std::getenv("SORBFIT_SEED")) spec.seed = resolve_seed(common);
  const auto pop = synth::gen_population(spec);
  const auto t = out_target(out, "isotherms.csv");
  data::write_isotherms_csv(t.dir / "isotherms.csv", pop.isotherms);
  data::write_properties_csv(t.dir / "properties.csv", pop.properties);
  write_json(t.dir / "truth.json", synth::to_json(pop.truth));
  echo_config(t.dir / "config.json", "synth", {{"spec", synth::to_json(spec)}});
  std::cout << "wrote " << pop.isotherms.size() << " isotherm rows and " << pop.properties.size() << " samples to "
            << t.dir.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ ingest

int cmd_ingest(const Common& common, const std::string& iso_path, const std::string& prop_path, const std::string& out) {
  const auto seed = resolve_seed(common);
  const auto iso = data::ingest_isotherms(iso_path);
  const auto props = data::ingest_properties(prop_path);
  data::JoinCoverage cov;
  const auto records = data::match_samples(props.records, iso.records, &cov);
  const auto quality = data::assess_quality(records);
  std::vector<std::pair<std::string, data::Lithology>> keys;
  std::set<std::string> seen;
  for (const auto& r : iso.records)
    if (seen.insert(r.sample_key).second) keys.push_back({r.sample_key, r.lithology});
  const auto split = data::stratified_split(keys, {}, seed);

  const auto t = out_target(out, "isotherms.csv");
  data::write_isotherms_csv(t.dir / "isotherms.csv", iso.records);
  data::write_properties_csv(t.dir / "properties.csv", props.records);
  data::write_rejects_csv(t.dir / "rejects_isotherms.csv", iso.rejects);
  data::write_rejects_csv(t.dir / "rejects_properties.csv", props.rejects);
  json q = data::to_json(quality);
  q["join"] = {{"isotherm_records", cov.isotherm_records},
               {"matched_records", cov.matched_records},
               {"property_only_records", cov.property_only_records},
               {"unmatched_property_samples", cov.unmatched_property_samples}};
  write_json(t.dir / "quality.json", q);
  write_json(t.dir / "split.json", data::to_json(split));
  echo_config(t.dir / "config.json", "ingest",
              {{"isotherms", iso_path}, {"properties", prop_path}, {"seed", seed}, {"split_ratios", {0.70, 0.15, 0.15}}});
  std::cout << "accepted " << iso.records.size() << " isotherm rows (" << iso.rejects.size() << " rejected), "
            << props.records.size() << " samples (" << props.rejects.size() << " rejected)\n";
  return 0;
}

// ------------------------------------------------------------------ fit

int cmd_fit(const Common& common, const std::string& in, const std::string& forms_arg, int boot, int cv, bool aggregate,
            const std::string& out) {
  const auto seed = resolve_seed(common);
  if (boot < 0 || cv < 2) throw Error(Errc::InvalidArgument, "--boot must be >= 0 and --cv >= 2");
  const auto forms = parse_forms(forms_arg);
  const auto c = read_corpus(in, false);

  struct Curve {
    std::string key;
    data::Lithology lith;
    double T;
    std::vector<iso::IsothermPoint> pts;
  };
  std::map<std::pair<std::string, double>, Curve> curves;
  for (const auto& r : c.isotherms) {
    auto& cur = curves[{r.sample_key, r.temperature}];
    cur.key = r.sample_key;
    cur.lith = r.lithology;
    cur.T = r.temperature;
    cur.pts.push_back({r.pressure, r.temperature, r.uptake});
  }
  std::vector<const Curve*> list;
  for (const auto& [_, cur] : curves) list.push_back(&cur);

  fit::FitOptions opts;
  opts.de.seed = seed;
  std::vector<json> entries(list.size());
  parallel_for(list.size(), [&](std::size_t i) {
    const Curve& cur = *list[i];
    json e{{"sample_key", cur.key}, {"lithology", data::to_string(cur.lith)}, {"temperature", cur.T},
           {"n_points", cur.pts.size()}};
    double qmax_obs = 0.0;
    for (const auto& p : cur.pts) qmax_obs = std::max(qmax_obs, p.uptake);
    e["max_uptake"] = qmax_obs;
    std::vector<fit::FittedModel> fits;
    json failures = json::object();
    for (auto f : forms) {
      try {
        fits.push_back(fit::fit_sample(cur.pts, f, opts));
      } catch (const Error& err) {
        failures[std::string(iso::to_string(f))] = err.what();
      }
    }
    e["failures"] = failures;
    if (fits.empty()) {
      e["best"] = nullptr;
      entries[i] = e;
      return;
    }
    const auto ranked = fit::select_best_model(fits);
    e["fits"] = json::array();
    for (const auto& m : ranked) e["fits"].push_back(fit::to_json(m));
    e["best"] = iso::to_string(ranked[0].form);
    try {
      e["bootstrap"] = boot > 0 ? fit::to_json(fit::bootstrap_ci(cur.pts, ranked[0].form, boot, seed, opts)) : json(nullptr);
    } catch (const Error& err) {
      e["bootstrap"] = {{"error", err.what()}};
    }
    try {
      e["cv"] = fit::to_json(fit::kfold_cv(cur.pts, ranked[0].form, std::min<int>(cv, static_cast<int>(cur.pts.size())),
                                           seed, opts));
    } catch (const Error& err) {
      e["cv"] = {{"error", err.what()}};
    }
    entries[i] = e;
  });

  json report{{"format", "sorbfit-fits-1"}, {"samples", entries}};
  if (aggregate) {
    std::map<std::string, fit::Group> groups;
    for (const auto& r : c.isotherms) {
      const std::string g(data::to_string(r.lithology));
      groups[g].name = g;
      groups[g].points.push_back({r.pressure, r.temperature, r.uptake});
      groups["all"].name = "all";
      groups["all"].points.push_back({r.pressure, r.temperature, r.uptake});
    }
    std::vector<fit::Group> gl;
    for (auto& [_, g] : groups) gl.push_back(g);
    fit::AggregateOptions ao;
    ao.fit = opts;
    ao.cv_folds = cv;
    ao.seed = seed;
    report["aggregated"] = fit::to_json(fit::fit_aggregated(gl, forms, ao));
  }
  const auto t = out_target(out, "fits.json");
  write_json(t.file, report);
  json forms_json = json::array();
  for (auto f : forms) forms_json.push_back(iso::to_string(f));
  echo_config(t.config, "fit",
              {{"in", in}, {"forms", forms_json}, {"boot", boot}, {"cv", cv}, {"aggregate", aggregate}, {"seed", seed},
               {"de", {{"max_generations", opts.de.max_generations}, {"F", opts.de.F}, {"CR", opts.de.CR},
                       {"tol", opts.de.tol}, {"stagnation_window", opts.de.stagnation_window}}}});
  std::cout << "fitted " << entries.size() << " isotherms with " << forms.size() << " forms -> " << t.file.string()
            << "\n";
  return 0;
}

// ------------------------------------------------------------------ thermo

int cmd_thermo(const std::string& fits_path, const std::vector<double>& fractions, const std::string& out) {
  const auto fits = read_json(fits_path);
  if (fits.value("format", "") != "sorbfit-fits-1") throw Error(Errc::ParseError, "not a fit report: " + fits_path);
  struct Entry {
    double T;
    double max_uptake;
    std::map<std::string, std::vector<double>> params;
    std::string best;
  };
  std::map<std::string, std::vector<Entry>> by_sample;
  try {
    for (const auto& s : fits.at("samples")) {
      if (s.at("best").is_null()) continue;
      Entry e{s.at("temperature").get<double>(), s.at("max_uptake").get<double>(), {}, s.at("best").get<std::string>()};
      for (const auto& f : s.at("fits")) e.params[f.at("form").get<std::string>()] = f.at("params").get<std::vector<double>>();
      by_sample[s.at("sample_key").get<std::string>()].push_back(e);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("fit report: ") + e.what());
  }

  json samples = json::array();
  std::ostringstream csv;
  csv << "sample_key,coverage_mmol_g,q_st_kJ_mol\n";
  csv.precision(17);
  for (const auto& [key, entries] : by_sample) {
    json s{{"sample_key", key}, {"temperatures", entries.size()}};
    json vh = json::object();
    std::set<std::string> forms;
    for (const auto& e : entries)
      for (const auto& [f, _] : e.params) forms.insert(f);
    for (const auto& fname : forms) {
      const auto form = *iso::parse_form(fname);
      std::vector<std::pair<double, double>> kt;
      for (const auto& e : entries) {
        const auto it = e.params.find(fname);
        if (it == e.params.end()) continue;
        if (const auto k = iso::affinity(form, it->second)) kt.push_back({e.T, *k});
      }
      if (kt.empty()) continue;
      try {
        vh[fname] = thermo::to_json(thermo::vant_hoff(kt));
      } catch (const Error& err) {
        vh[fname] = {{"error", err.what()}};
      }
    }
    s["vant_hoff"] = vh;

    // Isosteric heat from the most common best form across temperatures.
    std::map<std::string, int> votes;
    for (const auto& e : entries) ++votes[e.best];
    std::string best;
    int most = 0;
    for (const auto& [f, v] : votes)
      if (v > most) most = v, best = f;
    std::vector<thermo::TempModel> models;
    double cap = std::numeric_limits<double>::infinity();
    for (const auto& e : entries) {
      const auto it = e.params.find(best);
      if (it == e.params.end()) continue;
      models.push_back({e.T, *iso::parse_form(best), it->second});
      cap = std::min(cap, e.max_uptake);
    }
    std::vector<double> levels;
    for (double f : fractions) levels.push_back(f * cap);
    try {
      const auto curve = thermo::isosteric_heat(models, levels);
      s["isosteric"] = thermo::to_json(curve);
      s["isosteric_form"] = best;
      for (std::size_t i = 0; i < curve.q_st.size(); ++i)
        csv << key << "," << curve.coverage_levels[i] << "," << curve.q_st[i] << "\n";
    } catch (const Error& err) {
      s["isosteric"] = {{"error", err.what()}};
    }
    samples.push_back(s);
  }
  const auto t = out_target(out, "thermo.json");
  write_json(t.file, {{"format", "sorbfit-thermo-1"}, {"samples", samples}});
  write_text(t.dir / (t.file.stem().string() + "_isosteric.csv"), csv.str());
  echo_config(t.config, "thermo", {{"fits", fits_path}, {"coverage_fractions", fractions}});
  std::cout << "thermodynamics for " << samples.size() << " samples -> " << t.file.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ featurize

std::string action_name(features::OutlierAction a) {
  switch (a) {
    case features::OutlierAction::Keep: return "keep";
    case features::OutlierAction::Winsorize: return "winsorize";
    case features::OutlierAction::Exclude: return "exclude";
  }
  return "keep";
}

features::OutlierAction parse_action(const std::string& s) {
  if (s == "keep") return features::OutlierAction::Keep;
  if (s == "winsorize") return features::OutlierAction::Winsorize;
  if (s == "exclude") return features::OutlierAction::Exclude;
  throw Error(Errc::ParseError, "unknown outlier action '" + s + "'");
}

json outliers_json(const features::OutlierReport& r) {
  json a = json::array();
  for (auto x : r.action) a.push_back(action_name(x));
  auto clip = [](const std::vector<double>& v) {
    json c = json::array();
    for (double x : v) c.push_back(std::isnan(x) ? json(nullptr) : json(x));
    return c;
  };
  return {{"action", a}, {"univariate", r.univariate}, {"multivariate", r.multivariate},
          {"isolation_score", r.isolation_score}, {"p01", clip(r.p01)}, {"p99", clip(r.p99)}};
}

features::OutlierReport outliers_from_json(const json& j) {
  features::OutlierReport r;
  try {
    for (const auto& a : j.at("action")) r.action.push_back(parse_action(a.get<std::string>()));
    r.univariate = j.at("univariate").get<std::vector<bool>>();
    r.multivariate = j.at("multivariate").get<std::vector<bool>>();
    r.isolation_score = j.at("isolation_score").get<std::vector<double>>();
    for (const auto& x : j.at("p01")) r.p01.push_back(x.is_null() ? std::nan("") : x.get<double>());
    for (const auto& x : j.at("p99")) r.p99.push_back(x.is_null() ? std::nan("") : x.get<double>());
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("outlier report: ") + e.what());
  }
  return r;
}

int cmd_featurize(const Common& common, const std::string& in, int select, bool outliers, const std::string& out) {
  const auto seed = resolve_seed(common);
  if (select < 1) throw Error(Errc::InvalidArgument, "--select must be >= 1");
  const auto c = read_corpus(in, true);
  const auto split = split_for(in, c, seed);
  const auto records = data::match_samples(c.properties, c.isotherms);
  const auto train = pipeline::partition_records(records, split, data::Partition::Train);
  const auto val = pipeline::partition_records(records, split, data::Partition::Validation);
  const auto test = pipeline::partition_records(records, split, data::Partition::Test);
  pipeline::PipelineConfig pc;
  pc.select_k = select;
  pc.handle_outliers = outliers;
  pc.seed = seed;
  const auto fitres = pipeline::fit_pipeline(train, pc);

  const auto t = out_target(out, "pipeline.json");
  write_json(t.dir / "pipeline.json", pipeline::to_json(fitres.pipeline));
  write_json(t.dir / "outliers.json", outliers_json(fitres.outliers));
  write_json(t.dir / "split.json", data::to_json(split));
  data::write_isotherms_csv(t.dir / "isotherms.csv", c.isotherms);
  data::write_properties_csv(t.dir / "properties.csv", c.properties);
  write_text(t.dir / "features_train.csv", features::to_csv(fitres.pipeline.transform(train)));
  if (!val.empty()) write_text(t.dir / "features_val.csv", features::to_csv(fitres.pipeline.transform(val)));
  if (!test.empty()) write_text(t.dir / "features_test.csv", features::to_csv(fitres.pipeline.transform(test)));
  echo_config(t.dir / "config.json", "featurize",
              {{"in", in}, {"select", select}, {"handle_outliers", outliers}, {"seed", seed}});
  std::cout << "selected " << fitres.pipeline.inputs.size() << " features from " << train.size()
            << " training rows -> " << t.dir.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ train

struct FeatureBundle {
  pipeline::Pipeline pipe;
  features::OutlierReport outliers;
  Corpus corpus;
  data::SplitAssignment split;
  std::vector<data::IntegratedRecord> train, val, test;
};

FeatureBundle read_features(const fs::path& dir) {
  FeatureBundle b;
  b.pipe = pipeline::pipeline_from_json(read_json(dir / "pipeline.json"));
  b.outliers = outliers_from_json(read_json(dir / "outliers.json"));
  b.corpus = read_corpus(dir, true);
  b.split = data::split_from_json(read_json(dir / "split.json"));
  const auto records = data::match_samples(b.corpus.properties, b.corpus.isotherms);
  b.train = pipeline::partition_records(records, b.split, data::Partition::Train);
  b.val = pipeline::partition_records(records, b.split, data::Partition::Validation);
  b.test = pipeline::partition_records(records, b.split, data::Partition::Test);
  if (b.outliers.action.size() != b.train.size() || b.outliers.univariate.size() != b.train.size() ||
      b.outliers.multivariate.size() != b.train.size() || b.outliers.p01.size() != b.outliers.p99.size())
    throw Error(Errc::ParseError, "outlier report does not match the training rows");
  return b;
}

int cmd_train(const Common& common, const std::string& feat_dir, const std::string& schedule_arg,
              const std::string& ensemble_arg, const std::string& physics, const std::string& qmax_arg,
              const std::string& out) {
  const auto seed = resolve_seed(common);
  pinn::TrainSchedule sched;
  if (schedule_arg != "default") sched = pinn::schedule_from_json(read_json(schedule_arg));
  if (physics == "off") sched.physics_enabled = false;
  else if (physics != "on") throw Error(Errc::InvalidArgument, "--physics must be on or off");
  const QmaxTable qmax = qmax_arg.empty() ? QmaxTable{} : qmax_from_json(read_json(qmax_arg));

  uq::EnsembleSpec spec;
  if (ensemble_arg == "none") {
    uq::MemberSpec m;
    m.seed = seed;
    spec.members = {m};
  } else if (ensemble_arg == "standard") {
    spec = uq::EnsembleSpec::standard();
  } else if (ensemble_arg == "seeds-only") {
    spec = uq::EnsembleSpec::seeds_only();
  } else {
    spec = uq::ensemble_spec_from_json(read_json(ensemble_arg));
  }

  const auto b = read_features(feat_dir);
  if (b.val.empty()) throw Error(Errc::InsufficientSamples, "the validation partition is empty");
  const auto dtrain = b.pipe.dataset(b.train, sched.pressure_step, &b.outliers);
  const auto dval = b.pipe.dataset(b.val, sched.pressure_step);
  const int d = static_cast<int>(b.pipe.inputs.size());

  const std::size_t k = spec.members.size();
  std::vector<std::optional<pinn::Network>> nets(k);
  std::vector<pinn::TrainResult> results(k);
  parallel_for(k, [&](std::size_t i) {
    const auto& m = spec.members[i];
    pinn::Network net(uq::arch_for(m, d));
    results[i] = pinn::train(net, dtrain, dval, uq::schedule_for(m, sched), qmax, m.seed);
    nets[i] = std::move(net);
  });

  const auto t = out_target(out, "manifest.json");
  json members = json::array();
  uq::Ensemble ens{spec, {}, 1.0};
  for (std::size_t i = 0; i < k; ++i) {
    const std::string ckpt = "member_" + std::to_string(i) + ".json";
    write_json(t.dir / ckpt, pinn::to_json(*nets[i]));
    write_text(t.dir / ("history_" + std::to_string(i) + ".csv"), pinn::history_csv(results[i]));
    json mj = uq::to_json(spec.members[i]);
    mj["checkpoint"] = ckpt;
    mj["parameters"] = nets[i]->parameter_count();
    mj["epochs_run"] = results[i].epochs_run;
    mj["best_val"] = results[i].best_val;
    members.push_back(mj);
    ens.members.push_back(std::move(*nets[i]));
  }
  json calibration = nullptr;
  if (k >= 2) {
    const auto pv = uq::predict_ensemble(ens, dval.X, dval.PT);
    try {
      const auto cal = uq::calibrate_temperature(pv.mean, pv.sigma_raw, dval.y);
      ens.tau = cal.tau;
      calibration = uq::to_json(cal);
    } catch (const Error& err) {
      calibration = {{"error", err.what()}};
    }
  }
  copy_into(fs::path(feat_dir) / "pipeline.json", t.dir);
  copy_into(fs::path(feat_dir) / "properties.csv", t.dir);
  write_json(t.file, {{"format", "sorbfit-ensemble-1"},
                      {"members", members},
                      {"tau", ens.tau},
                      {"calibration", calibration},
                      {"pipeline", "pipeline.json"},
                      {"properties", "properties.csv"},
                      {"qmax", to_json(qmax)}});
  echo_config(t.config, "train",
              {{"features", feat_dir}, {"schedule", pinn::to_json(sched)}, {"ensemble", uq::to_json(spec)},
               {"qmax", to_json(qmax)}, {"seed", seed}});
  std::cout << "trained " << k << " member(s) on " << dtrain.size() << " rows; tau = " << ens.tau << " -> "
            << t.dir.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ predict

int cmd_predict(const std::string& manifest_path, const std::string& in, const std::string& props_arg, double level,
                const std::string& out) {
  if (!(level > 0.0 && level < 1.0)) throw Error(Errc::InvalidArgument, "--level must be in (0, 1)");
  const fs::path mpath(manifest_path);
  const fs::path base = mpath.has_parent_path() ? mpath.parent_path() : fs::path(".");
  const auto manifest = read_json(mpath);
  if (manifest.value("format", "") != "sorbfit-ensemble-1") throw Error(Errc::ParseError, "not an ensemble manifest");
  uq::Ensemble ens;
  pipeline::Pipeline pipe;
  try {
    pipe = pipeline::pipeline_from_json(read_json(base / manifest.at("pipeline").get<std::string>()));
    for (const auto& m : manifest.at("members"))
      ens.members.push_back(pinn::network_from_json(read_json(base / m.at("checkpoint").get<std::string>())));
    ens.tau = manifest.at("tau").get<double>();
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("manifest: ") + e.what());
  }
  const fs::path props_path = props_arg.empty() ? base / manifest.value("properties", "properties.csv") : fs::path(props_arg);
  const auto iso = data::ingest_isotherms(in);
  if (!iso.rejects.empty())
    throw Error(Errc::ParseError, in + " has " + std::to_string(iso.rejects.size()) + " invalid rows");
  const auto props = data::ingest_properties(props_path);
  std::vector<data::IntegratedRecord> records;
  for (auto& r : data::match_samples(props.records, iso.records))
    if (r.has_isotherm()) records.push_back(std::move(r));
  if (records.empty()) throw Error(Errc::EmptyInput, "no rows to predict");
  const auto fm = pipe.transform(records);
  const pinn::Matrix X = fm.values.transpose();
  pinn::Matrix PT(2, X.cols());
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    PT(0, i) = fm.pressure[static_cast<std::size_t>(i)];
    PT(1, i) = fm.temperature[static_cast<std::size_t>(i)];
  }
  pinn::Vector mean, sigma;
  if (ens.members.size() >= 2) {
    const auto p = uq::predict_ensemble(ens, X, PT);
    mean = p.mean;
    sigma = p.sigma_cal;
  } else {
    mean = pinn::predict(ens.members.at(0), X, PT);
    sigma = pinn::Vector::Zero(mean.size());
  }
  const double z = uq::z_for(level);
  std::ostringstream csv;
  csv.precision(17);
  csv << "sample_key,lithology,pressure_bar,temperature_K,mean,sigma_cal,lo,hi\n";
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const auto r = static_cast<std::size_t>(i);
    csv << fm.sample_keys[r] << "," << data::to_string(fm.lithology[r]) << "," << fm.pressure[r] << ","
        << fm.temperature[r] << "," << mean[i] << "," << sigma[i] << "," << mean[i] - z * sigma[i] << ","
        << mean[i] + z * sigma[i] << "\n";
  }
  const auto t = out_target(out, "preds.csv");
  write_text(t.file, csv.str());
  echo_config(t.config, "predict",
              {{"ensemble", manifest_path}, {"in", in}, {"properties", props_path.string()}, {"level", level},
               {"tau", ens.tau}});
  std::cout << "predicted " << mean.size() << " rows -> " << t.file.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ evaluate

struct PredRow {
  eval::PredictionRow row;
  double sigma = 0.0;
};

std::vector<PredRow> read_preds(const std::string& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "sample_key,lithology,pressure_bar,temperature_K,mean,sigma_cal,lo,hi")
    throw Error(Errc::MissingColumn, path + ": unexpected prediction header");
  std::vector<PredRow> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw Error(Errc::ParseError, path + " row " + std::to_string(row) + ": expected 8 fields");
    try {
      const auto lith = data::parse_lithology(f[1]);
      if (!lith) throw std::invalid_argument("lithology");
      out.push_back({{f[0], *lith, std::stod(f[2]), std::stod(f[3]), std::stod(f[4])}, std::stod(f[5])});
    } catch (const std::exception&) {
      throw Error(Errc::ParseError, path + " row " + std::to_string(row) + ": bad value");
    }
  }
  if (out.empty()) throw Error(Errc::EmptyFile, path + " has no rows");
  return out;
}

int cmd_evaluate(const std::string& preds_path, const std::string& truth_path, const std::string& qmax_arg,
                 const std::string& out) {
  const QmaxTable qmax = qmax_arg.empty() ? QmaxTable{} : qmax_from_json(read_json(qmax_arg));
  auto preds = read_preds(preds_path);
  const auto truth = data::ingest_isotherms(truth_path);
  std::map<std::tuple<std::string, double, double>, double> y_of;
  for (const auto& r : truth.records) y_of[{data::normalize_key(r.sample_key), r.pressure, r.temperature}] = r.uptake;
  std::stable_sort(preds.begin(), preds.end(), [](const PredRow& a, const PredRow& b) {
    return a.row.pressure < b.row.pressure;
  });
  std::vector<double> y, yhat, sigma;
  std::vector<eval::PredictionRow> rows;
  std::size_t unmatched = 0;
  for (const auto& p : preds) {
    const auto it = y_of.find({data::normalize_key(p.row.sample_key), p.row.pressure, p.row.temperature});
    if (it == y_of.end()) {
      ++unmatched;
      continue;
    }
    y.push_back(it->second);
    yhat.push_back(p.row.prediction);
    sigma.push_back(p.sigma);
    rows.push_back(p.row);
  }
  if (y.empty()) throw Error(Errc::EmptyInput, "no prediction matched a truth row");
  eval::MetricReport rep;
  rep.point = eval::point_metrics(y, yhat);
  rep.physics = eval::physics_metrics(rows, qmax);
  if (std::any_of(sigma.begin(), sigma.end(), [](double s) { return s > 0.0; })) {
    std::vector<eval::IntervalSet> sets;
    for (double level : uq::kLevels) {
      eval::IntervalSet s;
      s.nominal = level;
      const double z = uq::z_for(level);
      for (std::size_t i = 0; i < y.size(); ++i) {
        s.lo.push_back(yhat[i] - z * sigma[i]);
        s.hi.push_back(yhat[i] + z * sigma[i]);
      }
      sets.push_back(s);
    }
    rep.uq = eval::uq_metrics(y, yhat, sigma, sets);
  }
  std::vector<double> resid(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) resid[i] = y[i] - yhat[i];
  try {
    rep.residual = eval::residual_tests(resid, yhat);
  } catch (const Error&) {
  }
  json j = eval::to_json(rep);
  j["matched_rows"] = y.size();
  j["unmatched_predictions"] = unmatched;
  const auto t = out_target(out, "metrics.json");
  write_json(t.file, j);
  echo_config(t.config, "evaluate", {{"preds", preds_path}, {"truth", truth_path}, {"qmax", to_json(qmax)}});
  std::cout << "r2 " << rep.point.r2 << " on " << y.size() << " rows -> " << t.file.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ reproduce

int cmd_reproduce(const Common& common, const std::vector<std::string>& only, const std::string& out) {
  const auto seed = resolve_seed(common);
  accept::SuiteOptions o;
  o.seed = seed;
  o.only = only;
  o.progress = [](const accept::CriterionResult& c) {
    std::cout << c.id << " " << (c.pass ? "PASS" : "FAIL") << "  " << c.detail << "  [" << c.seconds << " s]"
              << std::endl;
  };
  const auto rep = accept::run_suite(o);
  const auto t = out_target(out, "summary.json");
  write_json(t.file, rep.summary());
  write_json(t.dir / "timings.json", rep.timings());
  echo_config(t.config, "reproduce", {{"seed", seed}, {"only", only}});
  if (!rep.all_pass()) {
    std::vector<std::string> failed;
    for (const auto& c : rep.results)
      if (!c.pass) failed.push_back(c.id);
    std::cerr << json{{"error", "AcceptanceFailed"}, {"failed", failed}, {"summary", t.file.string()}, {"exit_code", kExitValidation}}.dump()
              << "\n";
    return kExitValidation;
  }
  return 0;
}

void print_error(const std::string& code, const std::string& message, int exit_code) {
  std::cerr << json{{"error", code}, {"message", message}, {"exit_code", exit_code}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sorbfit: hydrogen sorption isotherm fitting and physics-informed prediction"};
  app.set_version_flag("--version", std::string(SORBFIT_VERSION));
  app.require_subcommand(1);
  unsigned threads = 1;
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

  Common common;
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", common.seed, "random seed (fallback: SORBFIT_SEED, then 42)")
        ->each([&](const std::string&) { common.seed_given = true; });
  };

  std::string out, spec = "default";
  auto* synth = app.add_subcommand("synth", "generate a synthetic population");
  synth->add_option("--spec", spec, "'default' or a population spec JSON");
  synth->add_option("--out", out, "output directory")->required();
  add_seed(synth);

  std::string iso_path, prop_path;
  auto* ingest = app.add_subcommand("ingest", "validate and join isotherm and property CSVs");
  ingest->add_option("--isotherms", iso_path)->required();
  ingest->add_option("--properties", prop_path)->required();
  ingest->add_option("--out", out)->required();
  add_seed(ingest);

  std::string in, forms = "individual";
  int boot = 500, cv = 5;
  bool aggregate = true;
  auto* fitc = app.add_subcommand("fit", "fit isotherm forms per sample and per lithology");
  fitc->add_option("--in", in, "directory with isotherms.csv")->required();
  fitc->add_option("--forms", forms, "all | classical | individual | comma list");
  fitc->add_option("--boot", boot, "bootstrap refits of the best form");
  fitc->add_option("--cv", cv, "cross-validation folds");
  fitc->add_option("--aggregate", aggregate, "pooled lithology fits (true/false)");
  fitc->add_option("--out", out, "directory or .json file")->required();
  add_seed(fitc);

  std::string fits_path;
  std::vector<double> fractions{0.1, 0.2, 0.3, 0.4, 0.5};
  auto* thermoc = app.add_subcommand("thermo", "Van't Hoff and isosteric heat from a fit report");
  thermoc->add_option("--fits", fits_path)->required();
  thermoc->add_option("--coverage", fractions, "coverage levels as fractions of the smallest max uptake");
  thermoc->add_option("--out", out)->required();

  int select = 50;
  bool outliers = true;
  auto* feat = app.add_subcommand("featurize", "engineer, impute, scale and select features");
  feat->add_option("--in", in)->required();
  feat->add_option("--select", select);
  feat->add_option("--outliers", outliers, "handle outliers (true/false)");
  feat->add_option("--out", out)->required();
  add_seed(feat);

  std::string features_dir, schedule = "default", ensemble = "none", physics = "on", qmax;
  auto* trainc = app.add_subcommand("train", "train the network or an ensemble");
  trainc->add_option("--features", features_dir)->required();
  trainc->add_option("--schedule", schedule, "'default' or a schedule JSON");
  trainc->add_option("--ensemble", ensemble, "none | standard | seeds-only | ensemble spec JSON");
  trainc->add_option("--physics", physics, "on | off");
  trainc->add_option("--qmax", qmax, "lithology capacity JSON");
  trainc->add_option("--out", out)->required();
  add_seed(trainc);

  std::string manifest, props;
  double level = 0.95;
  auto* pred = app.add_subcommand("predict", "predict uptake with intervals");
  pred->add_option("--ensemble", manifest)->required();
  pred->add_option("--in", in, "isotherm-schema CSV of rows to predict")->required();
  pred->add_option("--properties", props, "property CSV (default: the one stored with the model)");
  pred->add_option("--level", level);
  pred->add_option("--out", out)->required();

  std::string preds, truth;
  auto* evalc = app.add_subcommand("evaluate", "metrics for predictions against truth");
  evalc->add_option("--preds", preds)->required();
  evalc->add_option("--truth", truth)->required();
  evalc->add_option("--qmax", qmax);
  evalc->add_option("--out", out)->required();

  std::vector<std::string> only;
  std::string rep_out = "reproduce";
  auto* repro = app.add_subcommand("reproduce", "run the acceptance suite");
  repro->add_option("--only", only, "criterion ids")->delimiter(',');
  repro->add_option("--out", rep_out);
  add_seed(repro);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\n";
    print_error("UsageError", e.what(), kExitValidation);
    return kExitValidation;
  }

  set_worker_threads(threads);
  try {
    if (*synth) return cmd_synth(common, spec, out);
    if (*ingest) return cmd_ingest(common, iso_path, prop_path, out);
    if (*fitc) return cmd_fit(common, in, forms, boot, cv, aggregate, out);
    if (*thermoc) return cmd_thermo(fits_path, fractions, out);
    if (*feat) return cmd_featurize(common, in, select, outliers, out);
    if (*trainc) return cmd_train(common, features_dir, schedule, ensemble, physics, qmax, out);
    if (*pred) return cmd_predict(manifest, in, props, level, out);
    if (*evalc) return cmd_evaluate(preds, truth, qmax, out);
    if (*repro) return cmd_reproduce(common, only, rep_out);
  } catch (const Error& e) {
    const int code = e.code() == Errc::Io ? kExitIo : kExitValidation;
    print_error(std::string(to_string(e.code())), e.what(), code);
    return code;
  } catch (const fs::filesystem_error& e) {
    print_error("Io", e.what(), kExitIo);
    return kExitIo;
  } catch (const std::exception& e) {
    print_error("Internal", e.what(), kExitInternal);
    return kExitInternal;
  }
  return kExitInternal;
}
