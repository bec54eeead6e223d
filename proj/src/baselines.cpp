#include "sorbfit/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sorbfit/error.hpp"
#include "sorbfit/parallel.hpp"
#include "sorbfit/rng.hpp"
#include "sorbfit/stats.hpp"

namespace sorbfit::baselines {

namespace {

void check_shapes(const Matrix& X, const Vector& y) {
  if (X.rows() == 0) throw Error(Errc::EmptyInput, "no training rows");
  if (X.rows() != y.size()) throw Error(Errc::LengthMismatch, "X rows and y length differ");
}

struct Builder {
  const Matrix& X;
  const Vector& y;
  int max_depth;
  Rng& rng;
  Vector& importance;
  Tree tree;

  int build(std::vector<Eigen::Index>& idx, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double sum = 0.0, sum2 = 0.0;
    for (auto i : idx) sum += y[i], sum2 += y[i] * y[i];
    const double n = static_cast<double>(idx.size());
    tree.nodes[id].value = sum / n;
    const double parent_sse = std::max(0.0, sum2 - sum * sum / n);
    if (depth >= max_depth || idx.size() < 2 || parent_sse <= 0.0) return id;

    const auto d = static_cast<std::size_t>(X.cols());
    const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(d))));
    std::vector<std::size_t> feats(d);
    std::iota(feats.begin(), feats.end(), 0);
    for (std::size_t i = 0; i < m; ++i) std::swap(feats[i], feats[i + uniform_index(rng, d - i)]);
    feats.resize(m);
    std::sort(feats.begin(), feats.end());

    int best_f = -1;
    double best_gain = 1e-12 * parent_sse, best_thr = 0.0;
    std::vector<std::pair<double, double>> xv(idx.size());
    for (std::size_t f : feats) {
      for (std::size_t k = 0; k < idx.size(); ++k) xv[k] = {X(idx[k], static_cast<Eigen::Index>(f)), y[idx[k]]};
      std::sort(xv.begin(), xv.end());
      double sl = 0.0, s2l = 0.0;
      for (std::size_t k = 0; k + 1 < xv.size(); ++k) {
        sl += xv[k].second;
        s2l += xv[k].second * xv[k].second;
        if (!(xv[k].first < xv[k + 1].first)) continue;
        const double nl = static_cast<double>(k + 1), nr = n - nl;
        const double sr = sum - sl, s2r = sum2 - s2l;
        const double sse = (s2l - sl * sl / nl) + (s2r - sr * sr / nr);
        const double gain = parent_sse - sse;
        if (gain > best_gain) {
          best_gain = gain;
          best_f = static_cast<int>(f);
          best_thr = 0.5 * (xv[k].first + xv[k + 1].first);
        }
      }
    }
    if (best_f < 0) return id;

    std::vector<Eigen::Index> left, right;
    for (auto i : idx) (X(i, best_f) <= best_thr ? left : right).push_back(i);
    importance[best_f] += best_gain;
    tree.nodes[id].feature = best_f;
    tree.nodes[id].threshold = best_thr;
    const int l = build(left, depth + 1);
    const int r = build(right, depth + 1);
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
    return id;
  }
};

}  // namespace

Vector LinearModel::predict(const Matrix& X) const {
  if (X.cols() != weights.size()) throw Error(Errc::LengthMismatch, "feature count differs from the model");
  return (X * weights).array() + intercept;
}

LinearModel fit_linear(const Matrix& X, const Vector& y, double alpha) {
  check_shapes(X, y);
  if (!(alpha >= 0.0)) throw Error(Errc::InvalidArgument, "alpha must be >= 0");
  const Eigen::RowVectorXd xm = X.colwise().mean();
  const double ym = y.mean();
  const Matrix Xc = X.rowwise() - xm;
  const Vector yc = y.array() - ym;
  LinearModel m;
  m.alpha = alpha;
  if (alpha == 0.0) {
    Eigen::ColPivHouseholderQR<Matrix> qr(Xc);
    qr.setThreshold(1e-10);
    if (qr.rank() < X.cols()) throw Error(Errc::SingularSystem, "rank-deficient design without ridge penalty");
    m.weights = qr.solve(yc);
  } else {
    Matrix A = Xc.transpose() * Xc;
    A.diagonal().array() += alpha;
    m.weights = A.ldlt().solve(Xc.transpose() * yc);
  }
  m.intercept = ym - xm.dot(m.weights);
  if (!m.weights.allFinite() || !std::isfinite(m.intercept))
    throw Error(Errc::SingularSystem, "non-finite linear solution");
  return m;
}

double Tree::predict(const double* row, Eigen::Index stride) const {
  int k = 0;
  while (nodes[k].feature >= 0) k = row[nodes[k].feature * stride] <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
  return nodes[k].value;
}

Vector ForestModel::predict(const Matrix& X) const {
  if (trees.empty()) throw Error(Errc::InvalidArgument, "empty forest");
  if (X.cols() != importances.size()) throw Error(Errc::LengthMismatch, "feature count differs from the model");
  Vector out = Vector::Zero(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(X.data() + i, X.rows());
    out[i] = s / static_cast<double>(trees.size());
  }
  return out;
}

ForestModel fit_forest(const Matrix& X, const Vector& y, int n_estimators, int max_depth, std::uint64_t seed) {
  check_shapes(X, y);
  if (X.rows() < 2) throw Error(Errc::InsufficientData, "forest needs at least 2 rows");
  if (n_estimators < 1 || max_depth < 0) throw Error(Errc::InvalidArgument, "bad forest size");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(X.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < X.cols(); ++c)
      if (X(a, c) != X(b, c)) return X(a, c) < X(b, c);
    return y[a] < y[b];
  });

  ForestModel fm;
  fm.n_estimators = n_estimators;
  fm.max_depth = max_depth;
  fm.seed = seed;
  fm.trees.resize(static_cast<std::size_t>(n_estimators));
  std::vector<Vector> imp(static_cast<std::size_t>(n_estimators), Vector::Zero(X.cols()));
  parallel_for(static_cast<std::size_t>(n_estimators), [&](std::size_t t) {
    Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    std::vector<Eigen::Index> rows(order.size());
    for (auto& r : rows) r = order[uniform_index(rng, order.size())];
    Builder b{X, y, max_depth, rng, imp[t], {}};
    b.build(rows, 0);
    fm.trees[t] = std::move(b.tree);
  });
  fm.importances = Vector::Zero(X.cols());
  for (const auto& v : imp) fm.importances += v;
  const double total = fm.importances.sum();
  if (total > 0.0) fm.importances /= total;
  return fm;
}

fit::CVStats cross_validate(const ModelSpec& spec, const Matrix& X, const Vector& y, int k, std::uint64_t seed) {
  check_shapes(X, y);
  const auto n = static_cast<std::size_t>(X.rows());
  if (k < 2 || n < static_cast<std::size_t>(k)) throw Error(Errc::InsufficientData, "cross-validation needs 2 <= k <= rows");
  const auto label = fit::fold_labels(n, k, seed);
  std::vector<double> y_all(y.data(), y.data() + y.size());
  const double var_all = stats::variance(y_all);
  std::vector<double> oof(n), fold_r2, fold_rmse;
  for (int f = 0; f < k; ++f) {
    std::vector<Eigen::Index> tr, te;
    for (std::size_t i = 0; i < n; ++i) (label[i] == f ? te : tr).push_back(static_cast<Eigen::Index>(i));
    const Matrix Xtr = X(tr, Eigen::all), Xte = X(te, Eigen::all);
    const Vector ytr = y(tr);
    Vector pred;
    if (spec.kind == ModelSpec::Kind::Linear) {
      pred = fit_linear(Xtr, ytr, spec.alpha).predict(Xte);
    } else {
      pred = fit_forest(Xtr, ytr, spec.n_estimators, spec.max_depth, derive_seed(spec.seed, static_cast<std::uint64_t>(f)))
                 .predict(Xte);
    }
    double se = 0.0;
    for (std::size_t j = 0; j < te.size(); ++j) {
      oof[static_cast<std::size_t>(te[j])] = pred[static_cast<Eigen::Index>(j)];
      const double r = y[te[j]] - pred[static_cast<Eigen::Index>(j)];
      se += r * r;
    }
    const double mse = se / static_cast<double>(te.size());
    fold_rmse.push_back(std::sqrt(mse));
    fold_r2.push_back(var_all > 0.0 ? 1.0 - mse / var_all : (mse == 0.0 ? 1.0 : 0.0));
  }
  fit::CVStats cv;
  cv.k = k;
  cv.pooled_r2 = stats::r2_score(y_all, oof);
  cv.mean_r2 = stats::mean(fold_r2);
  cv.std_r2 = stats::stddev(fold_r2);
  cv.mean_rmse = stats::mean(fold_rmse);
  cv.std_rmse = stats::stddev(fold_rmse);
  return cv;
}

nlohmann::json to_json(const LinearModel& m) {
  return {{"kind", "linear"},
          {"alpha", m.alpha},
          {"intercept", m.intercept},
          {"weights", std::vector<double>(m.weights.data(), m.weights.data() + m.weights.size())}};
}

LinearModel linear_from_json(const nlohmann::json& j) {
  try {
    LinearModel m;
    m.alpha = j.at("alpha").get<double>();
    m.intercept = j.at("intercept").get<double>();
    const auto w = j.at("weights").get<std::vector<double>>();
    m.weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("linear model: ") + e.what());
  }
}

nlohmann::json to_json(const ForestModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) {
    std::vector<int> f, l, r;
    std::vector<double> thr, v;
    for (const auto& nd : t.nodes) {
      f.push_back(nd.feature);
      thr.push_back(nd.threshold);
      l.push_back(nd.left);
      r.push_back(nd.right);
      v.push_back(nd.value);
    }
    trees.push_back({{"feature", f}, {"threshold", thr}, {"left", l}, {"right", r}, {"value", v}});
  }
  return {{"kind", "forest"},
          {"n_estimators", m.n_estimators},
          {"max_depth", m.max_depth},
          {"seed", m.seed},
          {"importances", std::vector<double>(m.importances.data(), m.importances.data() + m.importances.size())},
          {"trees", trees}};
}

ForestModel forest_from_json(const nlohmann::json& j) {
  try {
    ForestModel m;
    m.n_estimators = j.at("n_estimators").get<int>();
    m.max_depth = j.at("max_depth").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto imp = j.at("importances").get<std::vector<double>>();
    m.importances = Eigen::Map<const Vector>(imp.data(), static_cast<Eigen::Index>(imp.size()));
    for (const auto& tj : j.at("trees")) {
      const auto f = tj.at("feature").get<std::vector<int>>();
      const auto thr = tj.at("threshold").get<std::vector<double>>();
      const auto l = tj.at("left").get<std::vector<int>>();
      const auto r = tj.at("right").get<std::vector<int>>();
      const auto v = tj.at("value").get<std::vector<double>>();
      if (f.empty() || thr.size() != f.size() || l.size() != f.size() || r.size() != f.size() || v.size() != f.size())
        throw Error(Errc::ParseError, "forest tree arrays differ in length");
      Tree t;
      const int nn = static_cast<int>(f.size());
      for (std::size_t i = 0; i < f.size(); ++i) {
        const int self = static_cast<int>(i);
        if (f[i] >= 0 && (l[i] <= self || l[i] >= nn || r[i] <= self || r[i] >= nn ||
                          static_cast<std::size_t>(f[i]) >= imp.size()))
          throw Error(Errc::ParseError, "forest node index out of range");
        t.nodes.push_back({f[i], thr[i], l[i], r[i], v[i]});
      }
      m.trees.push_back(std::move(t));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("forest model: ") + e.what());
  }
}

}  // namespace sorbfit::baselines
