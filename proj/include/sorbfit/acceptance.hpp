#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace sorbfit::accept {

struct CriterionResult {
  std::string id;
  std::string title;
  bool pass = false;
  std::string detail;      // one line
  nlohmann::json metrics;  // deterministic for a fixed seed
  double seconds = 0.0;    // wall time, kept out of the summary
};

CriterionResult a1_closed_forms(std::uint64_t seed);
CriterionResult a2_fit_recovery(std::uint64_t seed);
CriterionResult a3_generalization_collapse(std::uint64_t seed);
CriterionResult a4_thermodynamics();
CriterionResult a5_pinn_end_to_end(std::uint64_t seed);
CriterionResult a6_gradients(std::uint64_t seed);
CriterionResult a7_ablation(std::uint64_t seed);
CriterionResult a8_calibration(std::uint64_t seed);
CriterionResult a10_loss_arithmetic();

/// Ids run by the suite. A9 (determinism) compares two suite summaries and
/// is checked by the caller.
const std::vector<std::string>& suite_ids();

struct SuiteOptions {
  std::uint64_t seed = 42;
  std::vector<std::string> only;  // empty: every criterion
  std::function<void(const CriterionResult&)> progress;
};

struct SuiteReport {
  std::uint64_t seed = 42;
  std::vector<CriterionResult> results;

  bool all_pass() const;
  /// Byte-stable for a fixed seed: no timings, no host details.
  nlohmann::json summary() const;
  nlohmann::json timings() const;
};

SuiteReport run_suite(const SuiteOptions& opts);

}  // namespace sorbfit::accept
