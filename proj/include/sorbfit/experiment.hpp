#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sorbfit/evalx.hpp"
#include "sorbfit/pinn.hpp"
#include "sorbfit/pipeline.hpp"
#include "sorbfit/synth.hpp"

namespace sorbfit::experiment {

/// A synthetic population split 70/15/15 by sample, with the feature
/// pipeline fitted on the training partition.
struct Corpus {
  synth::Population population;
  QmaxTable qmax;
  data::SplitAssignment split;
  std::vector<data::IntegratedRecord> train, val, test;
  pipeline::FitResult fit;
  pinn::Dataset dtrain, dval, dtest;  // dtrain drops excluded outlier rows
};

Corpus make_corpus(const synth::PopulationSpec& spec, std::uint64_t split_seed = 42,
                   const pipeline::PipelineConfig& cfg = {});

/// Rows of `records` paired with network outputs, in transform order.
std::vector<eval::PredictionRow> prediction_rows(const pipeline::Pipeline& p,
                                                 const std::vector<data::IntegratedRecord>& records,
                                                 const pinn::Vector& yhat);

struct SingleModelResult {
  pinn::TrainResult train;
  eval::PointMetrics test_points;
  eval::PhysicsMetrics test_physics;
  pinn::Vector test_pred;
};

SingleModelResult train_single(const Corpus& c, const pinn::ArchSpec& arch, const pinn::TrainSchedule& s,
                               std::uint64_t seed);

/// Fraction of constraint checks a prediction set fails: negative outputs,
/// outputs above q_max, high-pressure rows outside the saturation band and
/// decreasing adjacent pairs, pooled over all checks.
double violation_rate(std::span<const eval::PredictionRow> rows, const QmaxTable& qmax = {});

}  // namespace sorbfit::experiment
