#include "sorbfit/uq.hpp"

#include <cmath>
#include <sstream>

#include "sorbfit/error.hpp"
#include "sorbfit/parallel.hpp"
#include "sorbfit/stats.hpp"

namespace sorbfit::uq {

EnsembleSpec EnsembleSpec::standard() {
  EnsembleSpec s;
  s.members = {{1.00, 4, 0.10, 1.2e-3, 42},   {0.75, 4, 0.08, 1.0e-3, 123},  {1.25, 4, 0.12, 1.5e-3, 456},
               {1.00, 3, 0.15, 1.2e-3, 789},  {1.00, 5, 0.10, 1.0e-3, 2024}, {0.75, 5, 0.08, 1.5e-3, 3141},
               {1.25, 3, 0.12, 1.0e-3, 1618}, {1.25, 5, 0.15, 1.2e-3, 2718}, {0.75, 3, 0.10, 1.5e-3, 9999},
               {1.00, 4, 0.12, 1.2e-3, 7777}};
  return s;
}

EnsembleSpec EnsembleSpec::seeds_only() {
  EnsembleSpec s = standard();
  for (auto& m : s.members) {
    const auto seed = m.seed;
    m = MemberSpec{};
    m.seed = seed;
  }
  return s;
}

void EnsembleSpec::validate() const {
  if (members.size() < 2) throw Error(Errc::TooFewMembers, "an ensemble needs at least 2 members");
  for (const auto& m : members) {
    if (m.depth < 3 || m.depth > 5) throw Error(Errc::InvalidArgument, "member depth must be 3, 4 or 5");
    if (!(m.width_mult > 0.0)) throw Error(Errc::InvalidArgument, "member width_mult must be positive");
    if (!(m.dropout >= 0.0 && m.dropout < 1.0)) throw Error(Errc::InvalidArgument, "member dropout must be in [0, 1)");
    if (!(m.lr > 0.0)) throw Error(Errc::InvalidArgument, "member learning rate must be positive");
  }
}

std::vector<int> backbone_for_depth(int depth) {
  switch (depth) {
    case 3: return {256, 512, 256};
    case 4: return {256, 512, 256, 128};
    case 5: return {256, 512, 512, 256, 128};
    default: throw Error(Errc::InvalidArgument, "depth must be 3, 4 or 5");
  }
}

pinn::ArchSpec arch_for(const MemberSpec& m, int input_dim) {
  pinn::ArchSpec a;
  a.input_dim = input_dim;
  a.backbone_widths = backbone_for_depth(m.depth);
  a.width_mult = m.width_mult;
  a.dropout = m.dropout;
  a.seed = m.seed;
  return a;
}

pinn::TrainSchedule schedule_for(const MemberSpec& m, const pinn::TrainSchedule& base) {
  pinn::TrainSchedule s = base;
  s.lr_phase1 = m.lr;
  return s;
}

double z_for(double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error(Errc::InvalidArgument, "confidence level must be in (0, 1)");
  return stats::normal_quantile(0.5 + level / 2.0);
}

std::vector<pinn::TrainResult> train_ensemble(Ensemble& e, int input_dim, const pinn::Dataset& train,
                                              const pinn::Dataset& val, const pinn::TrainSchedule& base,
                                              const QmaxTable& qmax) {
  e.spec.validate();
  const std::size_t k = e.spec.members.size();
  std::vector<std::optional<pinn::Network>> nets(k);
  std::vector<pinn::TrainResult> results(k);
  parallel_for(k, [&](std::size_t i) {
    const auto& m = e.spec.members[i];
    pinn::Network net(arch_for(m, input_dim));
    results[i] = pinn::train(net, train, val, schedule_for(m, base), qmax, m.seed);
    nets[i] = std::move(net);
  });
  e.members.clear();
  for (auto& n : nets) e.members.push_back(std::move(*n));
  e.tau = 1.0;
  return results;
}

EnsemblePrediction aggregate(const std::vector<Vector>& member_preds, double tau) {
  if (member_preds.size() < 2) throw Error(Errc::TooFewMembers, "aggregation needs at least 2 members");
  if (!(tau > 0.0)) throw Error(Errc::InvalidArgument, "tau must be positive");
  const auto n = member_preds.front().size();
  for (const auto& p : member_preds)
    if (p.size() != n) throw Error(Errc::LengthMismatch, "member predictions differ in length");
  const double k = static_cast<double>(member_preds.size());
  // Deviations from the elementwise minimum: identical members give exactly zero spread.
  Vector ref = member_preds.front();
  for (const auto& p : member_preds) ref = ref.cwiseMin(p);
  Vector shift = Vector::Zero(n);
  for (const auto& p : member_preds) shift += p - ref;
  shift /= k;
  EnsemblePrediction out;
  out.mean = ref + shift;
  out.sigma_raw = Vector::Zero(n);
  for (const auto& p : member_preds) out.sigma_raw.array() += ((p - ref) - shift).array().square();
  out.sigma_raw = (out.sigma_raw / k).cwiseSqrt();
  out.sigma_cal = tau * out.sigma_raw;
  for (std::size_t l = 0; l < kLevels.size(); ++l) {
    const double z = z_for(kLevels[l]);
    out.intervals[l].lo = out.mean - z * out.sigma_cal;
    out.intervals[l].hi = out.mean + z * out.sigma_cal;
  }
  return out;
}

std::vector<Vector> member_predictions(const Ensemble& e, const Matrix& X, const Matrix& PT) {
  std::vector<Vector> out;
  for (const auto& m : e.members) out.push_back(pinn::predict(m, X, PT));
  return out;
}

EnsemblePrediction predict_ensemble(const Ensemble& e, const Matrix& X, const Matrix& PT) {
  return aggregate(member_predictions(e, X, PT), e.tau);
}

double coverage(const Vector& mean, const Vector& sigma, const Vector& y, double tau, double level) {
  if (mean.size() != sigma.size() || mean.size() != y.size())
    throw Error(Errc::LengthMismatch, "coverage inputs differ in length");
  if (y.size() == 0) throw Error(Errc::EmptyInput, "coverage of an empty set");
  const double z = z_for(level);
  Eigen::Index hit = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) hit += std::abs(y[i] - mean[i]) <= tau * z * sigma[i];
  return static_cast<double>(hit) / static_cast<double>(y.size());
}

CalibrationResult calibrate_temperature(const Vector& mean, const Vector& sigma, const Vector& y, double target) {
  if (!(target > 0.0 && target < 1.0)) throw Error(Errc::InvalidArgument, "target coverage must be in (0, 1)");
  if (mean.size() != sigma.size() || mean.size() != y.size())
    throw Error(Errc::LengthMismatch, "calibration inputs differ in length");
  if (y.size() == 0) throw Error(Errc::EmptyInput, "calibration needs rows");
  const auto spread = (sigma.array() > 0.0).count();
  if (2 * spread < y.size())
    throw Error(Errc::DegenerateSpread, std::to_string(spread) + " of " + std::to_string(y.size()) +
                                            " rows have a positive ensemble spread");
  CalibrationResult r;
  for (std::size_t l = 0; l < kLevels.size(); ++l) r.coverage_before[l] = coverage(mean, sigma, y, 1.0, kLevels[l]);
  const double widest = coverage(mean, sigma, y, kTauHigh, target);
  if (widest < target - kCoverageBand) {
    std::ostringstream os;
    os << "coverage " << widest << " at tau = " << kTauHigh << " is below the target " << target;
    throw Error(Errc::UnreachableTarget, os.str());
  }
  double lo = std::log(kTauLow), hi = std::log(kTauHigh);
  double best_tau = kTauHigh, best_gap = std::abs(widest - target);
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double tau = std::exp(mid);
    const double c = coverage(mean, sigma, y, tau, target);
    const double gap = std::abs(c - target);
    if (gap < best_gap) best_gap = gap, best_tau = tau;
    if (gap <= kCoverageBand) break;
    if (c < target) lo = mid;
    else hi = mid;
  }
  r.tau = best_tau;
  r.reached = best_gap <= kCoverageBand;
  for (std::size_t l = 0; l < kLevels.size(); ++l) r.coverage_after[l] = coverage(mean, sigma, y, r.tau, kLevels[l]);
  return r;
}

Diversity ensemble_diversity(const std::vector<Vector>& member_preds) {
  if (member_preds.size() < 2) throw Error(Errc::TooFewMembers, "diversity needs at least 2 members");
  const auto n = member_preds.front().size();
  if (n < 10) throw Error(Errc::InsufficientData, "diversity needs at least 10 rows");
  const auto agg = aggregate(member_preds);
  Diversity d;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < member_preds.size(); ++a)
    for (std::size_t b = a + 1; b < member_preds.size(); ++b) {
      d.mean_correlation += stats::pearson({member_preds[a].data(), static_cast<std::size_t>(n)},
                                           {member_preds[b].data(), static_cast<std::size_t>(n)});
      ++pairs;
    }
  d.mean_correlation /= static_cast<double>(pairs);
  d.mean_sigma = agg.sigma_raw.mean();
  return d;
}

nlohmann::json to_json(const MemberSpec& m) {
  return {{"width_mult", m.width_mult}, {"depth", m.depth}, {"dropout", m.dropout}, {"lr", m.lr}, {"seed", m.seed}};
}

nlohmann::json to_json(const EnsembleSpec& s) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& m : s.members) a.push_back(to_json(m));
  return {{"members", a}};
}

EnsembleSpec ensemble_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::InvalidArgument, "ensemble spec must be an object");
  for (const auto& [k, _] : j.items())
    if (k != "members") throw Error(Errc::InvalidArgument, "unknown key '" + k + "' in ensemble spec");
  EnsembleSpec s;
  try {
    for (const auto& e : j.at("members")) {
      for (const auto& [k, _] : e.items())
        if (k != "width_mult" && k != "depth" && k != "dropout" && k != "lr" && k != "seed")
          throw Error(Errc::InvalidArgument, "unknown key '" + k + "' in ensemble member");
      MemberSpec m;
      m.width_mult = e.value("width_mult", m.width_mult);
      m.depth = e.value("depth", m.depth);
      m.dropout = e.value("dropout", m.dropout);
      m.lr = e.value("lr", m.lr);
      m.seed = e.value("seed", m.seed);
      s.members.push_back(m);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("ensemble spec: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json to_json(const CalibrationResult& c) {
  nlohmann::json before, after;
  for (std::size_t l = 0; l < kLevels.size(); ++l) {
    const std::string key = std::to_string(static_cast<int>(std::lround(kLevels[l] * 100)));
    before[key] = c.coverage_before[l];
    after[key] = c.coverage_after[l];
  }
  return {{"tau", c.tau}, {"coverage_before", before}, {"coverage_after", after}, {"target_reached", c.reached}};
}

}  // namespace sorbfit::uq
