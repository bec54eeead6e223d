#include "sorbfit/experiment.hpp"

#include <algorithm>
#include <map>

#include "sorbfit/error.hpp"

namespace sorbfit::experiment {

Corpus make_corpus(const synth::PopulationSpec& spec, std::uint64_t split_seed, const pipeline::PipelineConfig& cfg) {
  Corpus c;
  c.population = synth::gen_population(spec);
  c.qmax = spec.qmax;
  const auto records = data::match_samples(c.population.properties, c.population.isotherms);
  std::vector<std::pair<std::string, data::Lithology>> keys;
  for (const auto& p : c.population.properties) keys.push_back({p.sample_key, p.lithology});
  c.split = data::stratified_split(keys, {}, split_seed);
  c.train = pipeline::partition_records(records, c.split, data::Partition::Train);
  c.val = pipeline::partition_records(records, c.split, data::Partition::Validation);
  c.test = pipeline::partition_records(records, c.split, data::Partition::Test);
  c.fit = pipeline::fit_pipeline(c.train, cfg);
  c.dtrain = c.fit.pipeline.dataset(c.train, 1e-3, &c.fit.outliers);
  c.dval = c.fit.pipeline.dataset(c.val);
  c.dtest = c.fit.pipeline.dataset(c.test);
  return c;
}

std::vector<eval::PredictionRow> prediction_rows(const pipeline::Pipeline& p,
                                                 const std::vector<data::IntegratedRecord>& records,
                                                 const pinn::Vector& yhat) {
  const auto fm = p.transform(records);
  if (static_cast<Eigen::Index>(fm.rows()) != yhat.size())
    throw Error(Errc::LengthMismatch, "predictions do not match the records");
  std::vector<eval::PredictionRow> rows;
  for (std::size_t i = 0; i < fm.rows(); ++i)
    rows.push_back({fm.sample_keys[i], fm.lithology[i], fm.pressure[i], fm.temperature[i],
                    yhat[static_cast<Eigen::Index>(i)]});
  return rows;
}

SingleModelResult train_single(const Corpus& c, const pinn::ArchSpec& arch, const pinn::TrainSchedule& s,
                               std::uint64_t seed) {
  SingleModelResult r;
  pinn::Network net(arch);
  r.train = pinn::train(net, c.dtrain, c.dval, s, c.qmax, seed);
  r.test_pred = pinn::predict(net, c.dtest.X, c.dtest.PT);
  r.test_points = eval::point_metrics({c.dtest.y.data(), static_cast<std::size_t>(c.dtest.y.size())},
                                      {r.test_pred.data(), static_cast<std::size_t>(r.test_pred.size())});
  const auto rows = prediction_rows(c.fit.pipeline, c.test, r.test_pred);
  r.test_physics = eval::physics_metrics(rows, c.qmax);
  return r;
}

double violation_rate(std::span<const eval::PredictionRow> rows, const QmaxTable& qmax) {
  std::size_t checks = 0, failed = 0;
  std::map<std::pair<std::string, double>, std::vector<std::pair<double, double>>> curves;
  for (const auto& r : rows) {
    const double q = qmax.of(r.lithology);
    checks += 2;
    failed += r.prediction < 0.0;
    failed += r.prediction > q;
    if (r.pressure > eval::kHighPressureBar) {
      ++checks;
      failed += r.prediction < eval::kSaturationBandLow * q || r.prediction > q;
    }
    curves[{r.sample_key, r.temperature}].push_back({r.pressure, r.prediction});
  }
  for (auto& [_, pts] : curves) {
    std::sort(pts.begin(), pts.end());
    for (std::size_t i = 1; i < pts.size(); ++i) {
      ++checks;
      failed += pts[i].second - pts[i - 1].second < -eval::kMonotonicSlack;
    }
  }
  if (checks == 0) throw Error(Errc::EmptyInput, "no predictions to check");
  return static_cast<double>(failed) / static_cast<double>(checks);
}

}  // namespace sorbfit::experiment
