#include "sorbfit/fit_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sorbfit/error.hpp"
#include "sorbfit/evalx.hpp"
#include "sorbfit/parallel.hpp"
#include "sorbfit/rng.hpp"
#include "sorbfit/stats.hpp"

namespace sorbfit::fit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Box {
  std::vector<double> lo, hi;
  std::vector<bool> log;

  explicit Box(const std::vector<iso::ParamBound>& b) {
    for (const auto& x : b) {
      const bool use_log = x.log_scale && x.low > 0.0;
      log.push_back(use_log);
      lo.push_back(use_log ? std::log(x.low) : x.low);
      hi.push_back(use_log ? std::log(x.high) : x.high);
    }
  }

  void to_params(const std::vector<double>& u, std::vector<double>& out, const std::vector<iso::ParamBound>& b) const {
    for (std::size_t j = 0; j < u.size(); ++j) {
      out[j] = log[j] ? std::clamp(std::exp(u[j]), b[j].low, b[j].high) : u[j];
    }
  }
};

double rss_of(Points pts, iso::FormId form, std::span<const double> k) {
  double s = 0.0;
  for (const auto& pt : pts) {
    const double q = iso::eval_form_nothrow(form, k, pt.pressure, pt.temperature);
    if (std::isnan(q)) return kInf;
    s += (q - pt.uptake) * (q - pt.uptake);
  }
  return std::isfinite(s) ? s : kInf;
}

double max_pressure(Points pts) {
  double m = 0.0;
  for (const auto& p : pts) m = std::max(m, p.pressure);
  return m;
}

std::size_t bias_bin(double p) {
  for (std::size_t i = 0; i < 4; ++i)
    if (p < kBiasBinEdges[i]) return i;
  return p <= kBiasBinEdges[4] ? 4 : 5;
}

}  // namespace

DEResult differential_evolution(const Objective& objective, const std::vector<iso::ParamBound>& bounds,
                                const DEConfig& cfg) {
  const std::size_t n = bounds.size();
  if (n == 0) throw Error(Errc::InvalidArgument, "no parameters to optimize");
  for (const auto& b : bounds) {
    if (!std::isfinite(b.low) || !std::isfinite(b.high) || !(b.low < b.high))
      throw Error(Errc::InvalidArgument, "bounds must be finite with low < high");
  }
  if (!(cfg.F > 0.0 && cfg.F <= 2.0)) throw Error(Errc::InvalidArgument, "DE mutation factor F must lie in (0, 2]");
  if (!(cfg.CR >= 0.0 && cfg.CR <= 1.0)) throw Error(Errc::InvalidArgument, "DE crossover rate must lie in [0, 1]");
  const std::size_t np = cfg.population > 0 ? static_cast<std::size_t>(cfg.population) : std::max<std::size_t>(15, 10 * n);
  if (np < std::max<std::size_t>(4, 4 * n)) throw Error(Errc::InvalidArgument, "DE population must be >= 4 * n_params");

  const Box box(bounds);
  Rng rng = make_rng(cfg.seed);
  std::vector<std::vector<double>> pop(np, std::vector<double>(n));
  std::vector<double> cost(np);
  std::vector<double> params(n);
  auto evaluate = [&](const std::vector<double>& u) {
    box.to_params(u, params, bounds);
    const double c = objective(params);
    return std::isfinite(c) ? c : kInf;
  };
  for (auto& u : pop)
    for (std::size_t j = 0; j < n; ++j) u[j] = uniform(rng, box.lo[j], box.hi[j]);
  for (std::size_t i = 0; i < np; ++i) cost[i] = evaluate(pop[i]);

  auto best_index = [&] {
    return static_cast<std::size_t>(std::min_element(cost.begin(), cost.end()) - cost.begin());
  };
  DEResult res;
  std::size_t bi = best_index();
  std::vector<std::vector<double>> next = pop;
  std::vector<double> next_cost = cost;
  std::vector<double> trial(n);
  for (int g = 1; g <= cfg.max_generations; ++g) {
    for (std::size_t i = 0; i < np; ++i) {
      std::size_t r1, r2, r3;
      do r1 = uniform_index(rng, np); while (r1 == i);
      do r2 = uniform_index(rng, np); while (r2 == i || r2 == r1);
      do r3 = uniform_index(rng, np); while (r3 == i || r3 == r1 || r3 == r2);
      const std::size_t jrand = uniform_index(rng, n);
      for (std::size_t j = 0; j < n; ++j) {
        if (j == jrand || uniform01(rng) < cfg.CR) {
          double v = pop[r1][j] + cfg.F * (pop[r2][j] - pop[r3][j]);
          if (v < box.lo[j] || v > box.hi[j]) v = uniform(rng, box.lo[j], box.hi[j]);
          trial[j] = v;
        } else {
          trial[j] = pop[i][j];
        }
      }
      const double c = evaluate(trial);
      if (c <= cost[i]) {
        next[i] = trial;
        next_cost[i] = c;
      } else {
        next[i] = pop[i];
        next_cost[i] = cost[i];
      }
    }
    pop.swap(next);
    cost.swap(next_cost);
    bi = best_index();
    res.history.push_back(cost[bi]);
    res.generations = g;
    const int w = cfg.stagnation_window;
    if (g > w && std::isfinite(cost[bi])) {
      const double before = res.history[static_cast<std::size_t>(g - 1 - w)];
      if (before - cost[bi] <= cfg.tol * std::abs(cost[bi])) {
        res.converged = true;
        break;
      }
    }
  }
  res.best.resize(n);
  box.to_params(pop[bi], res.best, bounds);
  res.best_cost = cost[bi];
  return res;
}

InfoCriteria information_criteria(double rss, std::size_t n, std::size_t k) {
  if (n == 0) throw Error(Errc::DegenerateN, "information criteria need at least one point");
  const double r = std::max(rss, 1e-30);
  const auto nd = static_cast<double>(n);
  const auto kd = static_cast<double>(k);
  InfoCriteria ic;
  const double base = nd * std::log(r / nd);
  ic.aic = base + 2.0 * kd;
  ic.bic = base + kd * std::log(nd);
  if (n > k + 1) ic.aicc = ic.aic + 2.0 * kd * (kd + 1.0) / (nd - kd - 1.0);
  return ic;
}

FittedModel score_params(Points pts, iso::FormId form, std::span<const double> params) {
  FittedModel m;
  m.form = form;
  m.params = {form, std::vector<double>(params.begin(), params.end())};
  m.n_points = pts.size();
  std::vector<double> y, yhat;
  double ymax = 0.0;
  for (const auto& pt : pts) {
    y.push_back(pt.uptake);
    yhat.push_back(iso::eval_form(form, params, pt.pressure, pt.temperature));
    ymax = std::max(ymax, std::abs(pt.uptake));
  }
  for (std::size_t i = 0; i < y.size(); ++i) m.rss += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  m.r2 = stats::r2_score(y, yhat);
  m.rmse = std::sqrt(m.rss / static_cast<double>(std::max<std::size_t>(1, y.size())));
  const double floor_res = kRssResolution * ymax;
  const double rss_ic = std::max(m.rss, static_cast<double>(y.size()) * floor_res * floor_res);
  const auto ic = information_criteria(rss_ic, y.size(), iso::n_fitted(form));
  m.aic = ic.aic;
  m.bic = ic.bic;
  m.aicc = ic.aicc;
  m.physics = iso::validate_physics(form, params, pts);
  return m;
}

FittedModel fit_sample(Points pts, iso::FormId form, const FitOptions& opts) {
  const std::size_t k = iso::n_fitted(form);
  if (pts.size() < k + 1) {
    throw Error(Errc::InsufficientData, std::string(iso::to_string(form)) + " needs at least " +
                                            std::to_string(k + 1) + " points, got " + std::to_string(pts.size()));
  }
  const auto bounds = iso::param_bounds(form, {max_pressure(pts)});
  const auto res = differential_evolution([&](std::span<const double> x) { return rss_of(pts, form, x); }, bounds,
                                          opts.de);
  if (!std::isfinite(res.best_cost)) {
    throw Error(Errc::AllCostsInfinite, std::string(iso::to_string(form)) + " is undefined on this data");
  }
  auto m = score_params(pts, form, res.best);
  m.generations = res.generations;
  m.converged = res.converged;
  return m;
}

std::vector<FittedModel> select_best_model(const std::vector<FittedModel>& fits) {
  if (fits.empty()) throw Error(Errc::NoConvergedFits, "no fits to rank");
  std::vector<FittedModel> out = fits;
  std::stable_sort(out.begin(), out.end(), [](const FittedModel& a, const FittedModel& b) {
    const bool ca = !a.physics.flagged(), cb = !b.physics.flagged();
    if (ca != cb) return ca;
    if (a.aic != b.aic) return a.aic < b.aic;
    if (a.physics.score != b.physics.score) return a.physics.score > b.physics.score;
    const auto ka = iso::n_fitted(a.form), kb = iso::n_fitted(b.form);
    if (ka != kb) return ka < kb;
    return static_cast<int>(a.form) < static_cast<int>(b.form);
  });
  return out;
}

ParamCIs bootstrap_ci(Points pts, iso::FormId form, int n_boot, std::uint64_t seed, const FitOptions& opts) {
  if (n_boot <= 0) throw Error(Errc::InvalidArgument, "n_boot must be positive");
  const auto full = fit_sample(pts, form, opts);
  const std::size_t k = iso::n_fitted(form);
  const std::size_t n = pts.size();
  std::vector<std::optional<std::vector<double>>> draws(static_cast<std::size_t>(n_boot));
  parallel_for(draws.size(), [&](std::size_t b) {
    Rng rng = make_rng(derive_seed(seed, b));
    std::vector<iso::IsothermPoint> sample(n);
    for (auto& s : sample) s = pts[uniform_index(rng, n)];
    FitOptions o = opts;
    o.de.seed = derive_seed(seed, b, 1);
    try {
      draws[b] = fit_sample(sample, form, o).params.values;
    } catch (const Error&) {
      // skipped; counted below
    }
  });
  ParamCIs ci;
  ci.estimate = full.params.values;
  ci.n_boot = n_boot;
  ci.seed = seed;
  std::vector<std::vector<double>> cols(k);
  for (const auto& d : draws) {
    if (!d) continue;
    ++ci.n_success;
    for (std::size_t j = 0; j < k; ++j) cols[j].push_back((*d)[j]);
  }
  if (ci.n_success == 0) throw Error(Errc::TooManyFailedRefits, "every bootstrap refit failed");
  ci.too_many_failures = ci.n_success < 0.8 * n_boot;
  for (std::size_t j = 0; j < k; ++j) {
    std::sort(cols[j].begin(), cols[j].end());
    ci.lo.push_back(stats::quantile_sorted(cols[j], 0.025));
    ci.hi.push_back(stats::quantile_sorted(cols[j], 0.975));
  }
  return ci;
}

std::vector<int> fold_labels(std::size_t n, int k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(derive_seed(seed, n, static_cast<std::uint64_t>(k)));
  shuffle(idx.begin(), idx.end(), rng);
  std::vector<int> label(n);
  for (std::size_t j = 0; j < n; ++j) label[idx[j]] = static_cast<int>(j % static_cast<std::size_t>(k));
  return label;
}

CVStats kfold_cv(Points pts, iso::FormId form, int k, std::uint64_t seed, const FitOptions& opts) {
  const std::size_t n = pts.size();
  const std::size_t need = iso::n_fitted(form) + 1;
  if (k < 2 || n < static_cast<std::size_t>(k))
    throw Error(Errc::InsufficientData, "cross-validation needs 2 <= k <= n_points");
  const std::size_t largest_fold = (n + static_cast<std::size_t>(k) - 1) / static_cast<std::size_t>(k);
  if (n - largest_fold < need) throw Error(Errc::InsufficientData, "training folds too small for " +
                                                                       std::string(iso::to_string(form)));
  const auto label = fold_labels(n, k, seed);
  std::vector<double> y_all(n);
  for (std::size_t i = 0; i < n; ++i) y_all[i] = pts[i].uptake;
  const double var_all = stats::variance(y_all);
  std::vector<double> oof(n);
  std::vector<double> fold_r2, fold_rmse;
  for (int f = 0; f < k; ++f) {
    std::vector<iso::IsothermPoint> train;
    std::vector<std::size_t> held;
    for (std::size_t i = 0; i < n; ++i) {
      if (label[i] == f) held.push_back(i);
      else train.push_back(pts[i]);
    }
    FitOptions o = opts;
    o.de.seed = derive_seed(opts.de.seed, static_cast<std::uint64_t>(f));
    const auto m = fit_sample(train, form, o);
    double se = 0.0;
    for (std::size_t i : held) {
      oof[i] = iso::eval_form(form, m.params.values, pts[i].pressure, pts[i].temperature);
      se += (pts[i].uptake - oof[i]) * (pts[i].uptake - oof[i]);
    }
    const double mse = se / static_cast<double>(held.size());
    fold_rmse.push_back(std::sqrt(mse));
    // Score each fold against the whole isotherm's spread; a handful of
    // held-out points has no usable variance of its own.
    fold_r2.push_back(var_all > 0.0 ? 1.0 - mse / var_all : (mse == 0.0 ? 1.0 : 0.0));
  }
  CVStats cv;
  cv.k = k;
  cv.pooled_r2 = stats::r2_score(y_all, oof);
  cv.mean_r2 = stats::mean(fold_r2);
  cv.std_r2 = stats::stddev(fold_r2);
  cv.mean_rmse = stats::mean(fold_rmse);
  cv.std_rmse = stats::stddev(fold_rmse);
  return cv;
}

std::optional<double> AggregatedReport::best_r2(const std::string& group) const {
  std::optional<double> best;
  for (const auto& c : cells)
    if (c.group == group && c.ok && (!best || c.train_r2 > *best)) best = c.train_r2;
  return best;
}

AggregatedReport fit_aggregated(const std::vector<Group>& groups, const std::vector<iso::FormId>& forms,
                                const AggregateOptions& opts) {
  AggregatedReport rep;
  for (const auto& g : groups) {
    if (g.points.empty()) throw Error(Errc::InsufficientData, "group '" + g.name + "' is empty");
    for (auto f : forms) {
      AggregatedCell c;
      c.group = g.name;
      c.form = f;
      c.n_points = g.points.size();
      rep.cells.push_back(c);
    }
  }
  parallel_for(rep.cells.size(), [&](std::size_t ci) {
    auto& c = rep.cells[ci];
    const auto& g = groups[ci / forms.size()];
    const Points pts = g.points;
    try {
      const auto m = fit_sample(pts, c.form, opts.fit);
      c.params = m.params.values;
      c.train_r2 = m.r2;
      c.cv = kfold_cv(pts, c.form, opts.cv_folds, derive_seed(opts.seed, fnv1a(g.name)), opts.fit);

      std::vector<double> y, yhat;
      for (const auto& pt : pts) {
        y.push_back(pt.uptake);
        yhat.push_back(iso::eval_form(c.form, c.params, pt.pressure, pt.temperature));
      }
      // r2 interval: resample (observed, fitted) pairs of the pooled fit
      Rng rng = make_rng(derive_seed(opts.seed, fnv1a(g.name), static_cast<std::uint64_t>(c.form)));
      std::vector<double> r2s, yb(y.size()), yhb(y.size());
      for (int b = 0; b < opts.r2_boot; ++b) {
        for (std::size_t i = 0; i < y.size(); ++i) {
          const std::size_t j = uniform_index(rng, y.size());
          yb[i] = y[j];
          yhb[i] = yhat[j];
        }
        r2s.push_back(stats::r2_score(yb, yhb));
      }
      std::sort(r2s.begin(), r2s.end());
      c.r2_ci_lo = stats::quantile_sorted(r2s, 0.025);
      c.r2_ci_hi = stats::quantile_sorted(r2s, 0.975);

      std::vector<std::size_t> order(pts.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return pts[a].pressure < pts[b].pressure; });
      std::vector<double> resid;
      std::array<double, 6> sum{};
      std::array<std::size_t, 6> cnt{};
      for (std::size_t i : order) {
        const double e = yhat[i] - y[i];
        resid.push_back(e);
        const auto bin = bias_bin(pts[i].pressure);
        sum[bin] += e;
        ++cnt[bin];
      }
      try {
        c.durbin_watson = eval::durbin_watson(resid);
      } catch (const Error&) {
        c.durbin_watson.reset();  // exact fit
      }
      for (std::size_t b = 0; b < 6; ++b)
        if (cnt[b] > 0) c.bias[b] = sum[b] / static_cast<double>(cnt[b]);
      c.ok = true;
    } catch (const Error& e) {
      c.ok = false;
      c.error = std::string(to_string(e.code())) + ": " + e.what();
    }
  });
  return rep;
}

nlohmann::json to_json(const FittedModel& m) {
  nlohmann::json j;
  j["form"] = iso::to_string(m.form);
  j["param_names"] = nlohmann::json::array();
  for (auto n : iso::info(m.form).param_names) j["param_names"].push_back(std::string(n));
  j["params"] = m.params.values;
  j["rss"] = m.rss;
  j["r2"] = m.r2;
  j["rmse"] = m.rmse;
  j["aic"] = m.aic;
  j["bic"] = m.bic;
  j["aicc"] = m.aicc ? nlohmann::json(*m.aicc) : nlohmann::json(nullptr);
  j["physics"] = {{"score", m.physics.score}, {"violated_checks", m.physics.violated_checks},
                  {"flagged", m.physics.flagged()}};
  j["n_points"] = m.n_points;
  j["generations"] = m.generations;
  j["converged"] = m.converged;
  return j;
}

FittedModel fitted_model_from_json(const nlohmann::json& j) {
  FittedModel m;
  const auto form = iso::parse_form(j.at("form").get<std::string>());
  if (!form) throw Error(Errc::ParseError, "unknown form " + j.at("form").get<std::string>());
  m.form = *form;
  m.params = {*form, j.at("params").get<std::vector<double>>()};
  if (m.params.values.size() != iso::n_fitted(*form)) throw Error(Errc::ParseError, "parameter count mismatch");
  m.rss = j.value("rss", 0.0);
  m.r2 = j.value("r2", 0.0);
  m.rmse = j.value("rmse", 0.0);
  m.aic = j.value("aic", 0.0);
  m.bic = j.value("bic", 0.0);
  if (j.contains("aicc") && !j["aicc"].is_null()) m.aicc = j["aicc"].get<double>();
  if (j.contains("physics")) {
    m.physics.score = j["physics"].value("score", 1.0);
    m.physics.violated_checks = j["physics"].value("violated_checks", std::vector<std::string>{});
  }
  m.n_points = j.value("n_points", std::size_t{0});
  m.generations = j.value("generations", 0);
  m.converged = j.value("converged", false);
  return m;
}

nlohmann::json to_json(const ParamCIs& c) {
  return {{"estimate", c.estimate}, {"lo", c.lo},           {"hi", c.hi},
          {"n_boot", c.n_boot},     {"n_success", c.n_success}, {"seed", c.seed},
          {"too_many_failures", c.too_many_failures}};
}

nlohmann::json to_json(const CVStats& c) {
  return {{"k", c.k},           {"mean_r2", c.mean_r2},   {"std_r2", c.std_r2},
          {"mean_rmse", c.mean_rmse}, {"std_rmse", c.std_rmse}, {"pooled_r2", c.pooled_r2},
          {"negative_cv", c.negative()}};
}

nlohmann::json to_json(const AggregatedReport& r) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json j;
    j["group"] = c.group;
    j["form"] = iso::to_string(c.form);
    j["ok"] = c.ok;
    j["n_points"] = c.n_points;
    if (!c.ok) {
      j["error"] = c.error;
      arr.push_back(std::move(j));
      continue;
    }
    j["params"] = c.params;
    j["train_r2"] = c.train_r2;
    j["cv"] = to_json(c.cv);
    j["r2_ci"] = {c.r2_ci_lo, c.r2_ci_hi};
    j["durbin_watson"] = c.durbin_watson ? nlohmann::json(*c.durbin_watson) : nlohmann::json(nullptr);
    nlohmann::json bias = nlohmann::json::object();
    for (std::size_t b = 0; b < 6; ++b)
      bias[kBiasBinLabels[b]] = c.bias[b] ? nlohmann::json(*c.bias[b]) : nlohmann::json(nullptr);
    j["residual_bias"] = bias;
    arr.push_back(std::move(j));
  }
  return {{"cells", arr}};
}

}  // namespace sorbfit::fit
