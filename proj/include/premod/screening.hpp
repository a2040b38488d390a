#pragma once

// Multi-stage Bayesian screening-cascade calculator. Each stage filters the
// previous stage's positives: positives follow
//   N+ = [Sens*P + (1-Spec)*(1-P)] * N
// and the post-test prevalence follows the Bayes update. A stage's
// capture_fraction models the subset of true cases the stage can act on at
// all (the rest flow through the false-positive stream).

#include <cmath>
#include <string>
#include <vector>

#include "premod/common.hpp"

namespace premod {

struct ScreeningStage {
  std::string name;
  double sensitivity = 0.0;       // in (0, 1]
  double specificity = 0.0;       // in [0, 1)
  double capture_fraction = 1.0;  // fraction of true cases eligible for this stage

  void validate() const {
    if (!(sensitivity > 0.0 && sensitivity <= 1.0))
      throw Error("DegenerateStage", name + ": sensitivity must be in (0,1]");
    if (!(specificity >= 0.0 && specificity < 1.0))
      throw Error("DegenerateStage", name + ": specificity must be in [0,1)");
    if (!(capture_fraction > 0.0 && capture_fraction <= 1.0))
      throw Error("DegenerateStage", name + ": capture_fraction must be in (0,1]");
  }
};

struct AgeGroupRate {
  double rate = 0.0;    // per person
  double weight = 0.0;  // reference-population weight
};

// Age-standardized rate, sum of rate * weight; weights must sum to 1.
inline double asr(const std::vector<AgeGroupRate>& groups) {
  if (groups.empty()) throw Error("WeightSum", "no age groups");
  double wsum = 0.0, r = 0.0;
  for (const auto& g : groups) {
    wsum += g.weight;
    r += g.rate * g.weight;
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    throw Error("WeightSum", "age-group weights must sum to 1");
  return r;
}

struct StageOutcome {
  std::string name;
  double population_in = 0.0;   // N_s
  double prevalence_in = 0.0;   // P_s
  double positives = 0.0;       // N_s^+
  double cases_carried = 0.0;   // true positives passed to the next stage
};

struct CascadeResult {
  std::vector<StageOutcome> stages;
  double detected = 0.0;     // true positives out of the final stage
  double nns = 0.0;          // number needed to screen at the final stage
  double nns_base = 0.0;     // final-stage test applied to the unenriched population
  double efficiency = 0.0;   // nns_base / nns
  double final_ppv = 0.0;    // detected / final-stage positives
};

// Counts stay real throughout; rounding is presentation-only.
inline CascadeResult run_cascade(double prior_prevalence, double population,
                                 const std::vector<ScreeningStage>& stages) {
  if (stages.empty()) throw Error("DegenerateStage", "cascade needs at least one stage");
  if (!(prior_prevalence > 0.0 && prior_prevalence < 1.0))
    throw Error("OutOfRange", "prior prevalence must lie in (0,1)");
  if (!(population > 0.0)) throw Error("OutOfRange", "population must be positive");

  CascadeResult res;
  double n = population;
  double p = prior_prevalence;
  for (const auto& st : stages) {
    st.validate();
    StageOutcome o;
    o.name = st.name;
    o.population_in = n;
    o.prevalence_in = p;
    const double cases_in = p * n;
    const double eligible = st.capture_fraction * cases_in;
    const double rest = n - eligible;  // non-cases plus ineligible cases
    o.positives = st.sensitivity * eligible + (1.0 - st.specificity) * rest;
    o.cases_carried = st.sensitivity * eligible;
    res.stages.push_back(o);
    n = o.positives;
    p = o.positives > 0.0 ? o.cases_carried / o.positives : 0.0;
  }

  const auto& last = stages.back();
  const auto& last_out = res.stages.back();
  res.detected = last_out.cases_carried;
  res.nns = 1.0 / (last_out.prevalence_in * last.sensitivity * last.capture_fraction);
  res.nns_base = 1.0 / (prior_prevalence * last.sensitivity);
  res.efficiency = res.nns_base / res.nns;
  res.final_ppv = last_out.positives > 0.0 ? res.detected / last_out.positives : 0.0;
  return res;
}

// Paper-reported operating points used by the bundled scenarios.
inline ScreeningStage premod_stage() { return {"PREMOD", 0.953, 0.552, 1.0}; }
inline ScreeningStage redmod_stage() { return {"REDMOD", 0.73, 0.81, 1.0}; }
inline ScreeningStage eus_stage() { return {"EUS", 0.908, 0.94, 1.0}; }
inline ScreeningStage endpac_stage() { return {"END-PAC", 0.558, 0.82, 0.40}; }

constexpr double kDeploymentPrevalence = 0.000332;  // ASR 33.2 per 100,000, ages 50-74
constexpr double kDeploymentPopulation = 100000.0;

}  // namespace premod
