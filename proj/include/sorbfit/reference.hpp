#pragma once

#include <span>

#include "sorbfit/isotherm_models.hpp"

namespace sorbfit::reference {

/// Uptake of a form evaluated in 50-digit binary floating point, written
/// straight from the textbook expressions (no log1p/expm1 rewrites). Used as
/// the oracle for the closed forms.
double uptake_50(iso::FormId form, std::span<const double> params, double p, double T);

}  // namespace sorbfit::reference
