#pragma once

// Screening scenario files (JSON) plus the bundled named scenarios and the
// human-readable / CSV cascade reports.
//
// Schema:
//   { "population": 100000,
//     "prevalence": 0.000332            // or "asr_groups": [{"rate":..,"weight":..}]
//     "stages": [ {"name": "...", "sensitivity": s, "specificity": p,
//                  "capture_fraction": c? }, ... ] }

#include <string>
#include <vector>

#include "json.hpp"

#include "premod/io.hpp"
#include "premod/metrics.hpp"
#include "premod/screening.hpp"

namespace premod {

// Packages a model's operating point at the chosen threshold criterion as a
// cascade stage (default criterion in the CLI: threshold = prior prevalence).
inline ScreeningStage stage1_from_model(const std::vector<Scored>& scored,
                                        ThresholdCriterion criterion, double arg,
                                        const std::string& name = "model") {
  const auto reports = threshold_table(scored, {{criterion, arg}}, arg);
  const auto& r = reports.front();
  return {name, r.sensitivity, r.specificity, 1.0};
}

struct Scenario {
  std::string name;
  double population = 0.0;
  double prevalence = 0.0;
  std::vector<ScreeningStage> stages;
};

inline Scenario paper_pipeline_scenario() {
  return {"paper_pipeline", kDeploymentPopulation, kDeploymentPrevalence,
          {premod_stage(), redmod_stage(), eus_stage()}};
}

inline Scenario eus_only_scenario() {
  return {"eus_only", kDeploymentPopulation, kDeploymentPrevalence, {eus_stage()}};
}

inline Scenario endpac_comparison_scenario() {
  return {"endpac_comparison", kDeploymentPopulation, kDeploymentPrevalence,
          {endpac_stage(), eus_stage()}};
}

inline Scenario scenario_from_json(const nlohmann::json& j, const std::string& name) {
  Scenario sc;
  sc.name = name;
  sc.population = j.at("population");
  if (j.contains("prevalence")) {
    sc.prevalence = j.at("prevalence");
  } else if (j.contains("asr_groups")) {
    std::vector<AgeGroupRate> groups;
    for (const auto& g : j.at("asr_groups")) groups.push_back({g.at("rate"), g.at("weight")});
    sc.prevalence = asr(groups);
  } else {
    throw Error("ConfigError", "scenario needs 'prevalence' or 'asr_groups'");
  }
  for (const auto& s : j.at("stages"))
    sc.stages.push_back({s.at("name"), s.at("sensitivity"), s.at("specificity"),
                         s.value("capture_fraction", 1.0)});
  return sc;
}

// Named built-in, or a path to a scenario JSON file.
inline Scenario load_scenario(const std::string& name_or_path) {
  if (name_or_path == "paper_pipeline") return paper_pipeline_scenario();
  if (name_or_path == "eus_only") return eus_only_scenario();
  if (name_or_path == "endpac_comparison") return endpac_comparison_scenario();
  auto in = io::open_in(name_or_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("ParseError", "bad scenario file " + name_or_path + ": " + e.what());
  }
  return scenario_from_json(j, name_or_path);
}

// Display rounding is half-to-even; all cascade arithmetic stays real.
inline double round_even(double v) {
  const double f = std::floor(v);
  const double frac = v - f;
  if (frac > 0.5) return f + 1.0;
  if (frac < 0.5) return f;
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

inline std::string cascade_report(const Scenario& sc, const CascadeResult& res) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "scenario: %s  (population %.0f, prevalence %.6g)\n",
                sc.name.c_str(), sc.population, sc.prevalence);
  out += buf;
  out += "stage        pop_in      prev_in     positives   cases_carried\n";
  for (const auto& st : res.stages) {
    std::snprintf(buf, sizeof buf, "%-12s %-11.1f %-11.6f %-11.0f %.2f\n", st.name.c_str(),
                  st.population_in, st.prevalence_in, round_even(st.positives),
                  st.cases_carried);
    out += buf;
  }
  std::snprintf(buf, sizeof buf,
                "detected cancers: %.1f\nNNS: %.0f\nbaseline NNS (final stage alone): %.0f\n"
                "efficiency: %.1fx\nfinal PPV: %.1f%%\n",
                res.detected, round_even(res.nns), round_even(res.nns_base),
                res.efficiency, 100.0 * res.final_ppv);
  out += buf;
  return out;
}

inline void write_cascade_csv(const Scenario& sc, const CascadeResult& res,
                              const std::string& path) {
  auto out = io::open_out(path);
  out << "scenario,stage,population_in,prevalence_in,positives,cases_carried\n";
  char buf[256];
  for (const auto& st : res.stages) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g\n", sc.name.c_str(),
                  st.name.c_str(), st.population_in, st.prevalence_in, st.positives,
                  st.cases_carried);
    out << buf;
  }
  std::snprintf(buf, sizeof buf,
                "summary,detected=%.17g,nns=%.17g,nns_base=%.17g,efficiency=%.17g,ppv=%.17g\n",
                res.detected, res.nns, res.nns_base, res.efficiency, res.final_ppv);
  out << buf;
}

}  // namespace premod
