#pragma once

// Prevalence-aware recalibration: a closed-form logit shift by
// delta = ln(pi_tar) - ln(pi_src), mapping training-prior probabilities to
// target-population probabilities. Strictly monotone, so rankings (and
// AUROC) are untouched.

#include <cmath>

#include "premod/common.hpp"

namespace premod {

inline double prevalence_to_odds(double prevalence) {
  if (!(prevalence > 0.0 && prevalence < 1.0))
    throw Error("OutOfRange", "prevalence must lie in (0,1)");
  return prevalence / (1.0 - prevalence);
}

struct RecalSpec {
  double pi_src = 0.1;  // prior odds in the training distribution (1:10)
  double pi_tar = 0.1;  // prior odds in the target population

  static RecalSpec from_odds(double src, double tar) {
    if (!(src > 0.0) || !(tar > 0.0))
      throw Error("OutOfRange", "prior odds must be positive");
    return {src, tar};
  }

  static RecalSpec from_prevalences(double src, double tar) {
    return {prevalence_to_odds(src), prevalence_to_odds(tar)};
  }

  double delta() const {
    const double d = std::log(pi_tar) - std::log(pi_src);
    if (!std::isfinite(d)) throw Error("OutOfRange", "delta is not finite");
    return d;
  }
};

inline double recalibrate_logit(double z_u, const RecalSpec& spec) {
  return z_u + spec.delta();
}

inline double recalibrate_prob(double p_u, const RecalSpec& spec) {
  constexpr double eps = 1e-15;
  const double p = std::min(std::max(p_u, eps), 1.0 - eps);
  const double z_c = std::log(p / (1.0 - p)) + spec.delta();
  return 1.0 / (1.0 + std::exp(-z_c));
}

}  // namespace premod
