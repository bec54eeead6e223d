#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sorbfit {

enum class Errc {
  InvalidArgument,
  Io,
  // data_core
  MissingColumn,
  ParseError,
  EmptyFile,
  DuplicateSampleKey,
  InsufficientSamples,
  // isotherm_models / fit_engine
  DomainError,
  InsufficientData,
  AllCostsInfinite,
  NoConvergedFits,
  TooManyFailedRefits,
  DegenerateN,
  // thermo
  NonPositiveK,
  SingleTemperature,
  NoInvertibleLevels,
  // features
  MissingThermoInputs,
  AllMissingColumn,
  // baselines
  SingularSystem,
  // pinn
  DimensionMismatch,
  DivergenceDetected,
  // uq
  TooFewMembers,
  DegenerateSpread,
  UnreachableTarget,
  // evalx
  LengthMismatch,
  EmptyInput,
  ZeroResidualVariance,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace sorbfit
