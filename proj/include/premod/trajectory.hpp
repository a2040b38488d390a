#pragma once

// Continuous risk monitoring: score sliding windows per patient and build
// per-group median/IQR risk-over-time curves aligned on months before the
// index date.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "premod/encoder.hpp"
#include "premod/net.hpp"
#include "premod/recal.hpp"

namespace premod {

struct RiskTrajectory {
  std::string patient_id;
  int label = 0;
  std::vector<std::pair<long, double>> points;  // (months before index, probability)
};

inline RiskTrajectory patient_trajectory(const LabeledPatient& patient,
                                         const ModelParams& params,
                                         const EncoderConfig& enc,
                                         const std::optional<RecalSpec>& recal = std::nullopt,
                                         int step_days = 30) {
  RiskTrajectory tr;
  tr.patient_id = patient.patient.patient_id;
  tr.label = static_cast<int>(patient.label);
  for (const auto& [end_day, mat] : sliding_windows(patient, enc, step_days)) {
    double z = predict_logit(mat, params);
    if (recal) z = recalibrate_logit(z, *recal);
    const double p = 1.0 / (1.0 + std::exp(-z));
    const long months = std::lround(static_cast<double>(patient.index_day - end_day) / 30.0);
    tr.points.emplace_back(months, p);
  }
  // oldest window first -> months decreasing toward 0; store time-sorted
  std::sort(tr.points.begin(), tr.points.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  return tr;
}

struct CurvePoint {
  std::string group;
  long months_before_index = 0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  std::size_t n = 0;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& xs, double q) {
  if (xs.empty()) return 0.0;
  const double pos = q * static_cast<double>(xs.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] + frac * (xs[hi] - xs[lo]);
}

}  // namespace detail

// Aligns trajectories on months-before-index and emits per-group median and
// quartile bands; order of input trajectories does not matter.
inline std::vector<CurvePoint> cohort_curves(const std::vector<RiskTrajectory>& trajectories) {
  std::map<std::pair<std::string, long>, std::vector<double>> cells;
  for (const auto& tr : trajectories) {
    const std::string group = tr.label == 1 ? "case" : "control";
    for (const auto& [months, p] : tr.points) cells[{group, months}].push_back(p);
  }
  std::vector<CurvePoint> out;
  for (auto& [key, probs] : cells) {
    std::sort(probs.begin(), probs.end());
    CurvePoint cp;
    cp.group = key.first;
    cp.months_before_index = key.second;
    cp.median = detail::quantile_sorted(probs, 0.5);
    cp.q1 = detail::quantile_sorted(probs, 0.25);
    cp.q3 = detail::quantile_sorted(probs, 0.75);
    cp.n = probs.size();
    out.push_back(cp);
  }
  return out;
}

inline void write_curves_csv(const std::vector<CurvePoint>& curves, const std::string& path) {
  auto out = io::open_out(path);
  out << "group,months_before_index,median,q1,q3,n\n";
  char buf[128];
  for (const auto& c : curves) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", c.median, c.q1, c.q3);
    out << c.group << ',' << c.months_before_index << ',' << buf << ',' << c.n << '\n';
  }
}

}  // namespace premod
