#pragma once

// Discrimination and calibration metrology: AUROC (Mann-Whitney), confusion
// metrics and the diagnostic odds ratio, the operating-threshold table,
// Brier score, expected calibration error and the binned calibration line.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "premod/common.hpp"

namespace premod {

struct Scored {
  double score;
  int label;  // 1 = case
};

inline void require_both_classes(const std::vector<Scored>& s) {
  bool pos = false, neg = false;
  for (const auto& x : s) (x.label == 1 ? pos : neg) = true;
  if (!pos || !neg) throw Error("SingleClass", "need both classes present");
}

// Mann-Whitney statistic: fraction of (case, control) pairs where the case
// scores higher, ties counted 1/2. Computed via average ranks.
inline double auroc(const std::vector<Scored>& scored) {
  require_both_classes(scored);
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scored[a].score < scored[b].score;
  });
  double rank_sum_cases = 0.0;
  std::size_t n1 = 0, n0 = 0, i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scored[order[j]].score == scored[order[i]].score) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (scored[order[k]].label == 1) rank_sum_cases += avg_rank;
    i = j;
  }
  for (const auto& s : scored) (s.label == 1 ? n1 : n0) += 1;
  return (rank_sum_cases - 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1)) /
         (static_cast<double>(n1) * static_cast<double>(n0));
}

// Real-valued so expected counts from (sens, spec, class sizes) are admissible.
struct ConfusionCounts {
  double tp = 0, fp = 0, tn = 0, fn = 0;

  double sensitivity() const { return tp + fn > 0 ? tp / (tp + fn) : 0.0; }
  double specificity() const { return tn + fp > 0 ? tn / (tn + fp) : 0.0; }
  double ppv() const { return tp + fp > 0 ? tp / (tp + fp) : 1.0; }
  double npv() const { return tn + fn > 0 ? tn / (tn + fn) : 1.0; }
  double youden() const { return sensitivity() + specificity() - 1.0; }
};

struct DorValue {
  double value = 0.0;
  bool infinite = false;  // fp or fn was zero
};

// (TP*TN)/(FP*FN); +inf sentinel (flagged) when a denominator count is zero.
inline DorValue dor(const ConfusionCounts& c) {
  if (c.fp <= 0.0 || c.fn <= 0.0)
    return {std::numeric_limits<double>::infinity(), true};
  return {(c.tp * c.tn) / (c.fp * c.fn), false};
}

inline ConfusionCounts expected_counts(double sensitivity, double specificity,
                                       double n_cases, double n_controls) {
  ConfusionCounts c;
  c.tp = sensitivity * n_cases;
  c.fn = (1.0 - sensitivity) * n_cases;
  c.tn = specificity * n_controls;
  c.fp = (1.0 - specificity) * n_controls;
  return c;
}

// Positive prediction iff score >= threshold.
inline ConfusionCounts confusion_at(const std::vector<Scored>& scored, double threshold) {
  ConfusionCounts c;
  for (const auto& s : scored) {
    const bool pos = s.score >= threshold;
    if (s.label == 1)
      pos ? ++c.tp : ++c.fn;
    else
      pos ? ++c.fp : ++c.tn;
  }
  return c;
}

enum class ThresholdCriterion {
  SensTarget,       // smallest sensitivity >= target operating point, interpolated
  SpecTarget,
  SensEqSpec,
  MaxYouden,
  PriorPrevalence,  // threshold fixed at the assumed prevalence
  Fixed,
};

inline std::string criterion_name(ThresholdCriterion c, double arg) {
  char buf[64];
  switch (c) {
    case ThresholdCriterion::SensTarget:
      std::snprintf(buf, sizeof buf, "sensitivity=%g", arg);
      return buf;
    case ThresholdCriterion::SpecTarget:
      std::snprintf(buf, sizeof buf, "specificity=%g", arg);
      return buf;
    case ThresholdCriterion::SensEqSpec:
      return "sensitivity=specificity";
    case ThresholdCriterion::MaxYouden:
      return "max_youden_j";
    case ThresholdCriterion::PriorPrevalence:
      std::snprintf(buf, sizeof buf, "prior_prevalence=%g", arg);
      return buf;
    case ThresholdCriterion::Fixed:
      std::snprintf(buf, sizeof buf, "fixed=%g", arg);
      return buf;
  }
  return "?";
}

struct ThresholdReport {
  ThresholdCriterion criterion;
  double criterion_arg = 0.0;
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double ppv = 0.0;
  double npv = 0.0;
  double youden_j = 0.0;
  DorValue dor;
};

namespace detail {

struct RocPoint {
  double threshold;
  double sens;
  double spec;
};

// Operating points for each distinct score threshold, descending threshold
// (sens non-decreasing down the list), with a leading predict-nobody point.
inline std::vector<RocPoint> roc_points(const std::vector<Scored>& scored) {
  std::vector<Scored> s = scored;
  std::sort(s.begin(), s.end(),
            [](const Scored& a, const Scored& b) { return a.score > b.score; });
  double n1 = 0, n0 = 0;
  for (const auto& x : s) (x.label == 1 ? n1 : n0) += 1;
  std::vector<RocPoint> pts;
  pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  double tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = i;
    while (j < s.size() && s[j].score == s[i].score) {
      (s[j].label == 1 ? tp : fp) += 1;
      ++j;
    }
    pts.push_back({s[i].score, tp / n1, (n0 - fp) / n0});
    i = j;
  }
  return pts;
}

inline ThresholdReport report_from(ThresholdCriterion c, double arg, double threshold,
                                   const ConfusionCounts& counts) {
  ThresholdReport r;
  r.criterion = c;
  r.criterion_arg = arg;
  r.threshold = threshold;
  r.sensitivity = counts.sensitivity();
  r.specificity = counts.specificity();
  r.ppv = counts.ppv();
  r.npv = counts.npv();
  r.youden_j = counts.youden();
  r.dor = dor(counts);
  return r;
}

}  // namespace detail

// Builds the operating-point table for the requested criteria. Sens/Spec
// targets interpolate linearly between adjacent ROC points when no exact hit
// exists; their reported counts are expected (real-valued) counts.
inline std::vector<ThresholdReport> threshold_table(
    const std::vector<Scored>& scored,
    const std::vector<std::pair<ThresholdCriterion, double>>& criteria,
    double prior_prevalence = 0.0) {
  require_both_classes(scored);
  auto pts = detail::roc_points(scored);
  double n1 = 0, n0 = 0;
  for (const auto& s : scored) (s.label == 1 ? n1 : n0) += 1;

  auto interp_threshold = [](double a, double b, double t) {
    if (std::isinf(a)) return b;  // step off the predict-nobody sentinel
    return a + t * (b - a);
  };

  std::vector<ThresholdReport> out;
  for (auto [crit, arg] : criteria) {
    switch (crit) {
      case ThresholdCriterion::SensTarget: {
        // sens is non-decreasing along pts; take the first point at/past the
        // target, interpolating from its predecessor only when that trades
        // overshoot for specificity (never from the predict-nobody sentinel).
        std::size_t k = 0;
        while (k + 1 < pts.size() && pts[k].sens < arg) ++k;
        const bool interp = pts[k].sens > arg && k >= 2;
        if (!interp) {
          out.push_back(detail::report_from(
              crit, arg, pts[k].threshold,
              expected_counts(pts[k].sens, pts[k].spec, n1, n0)));
          break;
        }
        const double t = (arg - pts[k - 1].sens) / (pts[k].sens - pts[k - 1].sens);
        const double spec = pts[k - 1].spec + t * (pts[k].spec - pts[k - 1].spec);
        const double thr = interp_threshold(pts[k - 1].threshold, pts[k].threshold, t);
        out.push_back(detail::report_from(crit, arg, thr,
                                          expected_counts(arg, spec, n1, n0)));
        break;
      }
      case ThresholdCriterion::SpecTarget: {
        // spec is non-increasing along pts; take the last point meeting it,
        // interpolating toward the next point only when that buys sensitivity.
        std::size_t k = 0;
        while (k + 1 < pts.size() && pts[k + 1].spec >= arg) ++k;
        const bool interp =
            pts[k].spec > arg && k + 1 < pts.size() && pts[k + 1].sens > pts[k].sens;
        if (!interp) {
          out.push_back(detail::report_from(
              crit, arg, pts[k].threshold,
              expected_counts(pts[k].sens, pts[k].spec, n1, n0)));
          break;
        }
        const double t = (pts[k].spec - arg) / (pts[k].spec - pts[k + 1].spec);
        const double sens = pts[k].sens + t * (pts[k + 1].sens - pts[k].sens);
        const double thr = interp_threshold(pts[k].threshold, pts[k + 1].threshold, t);
        out.push_back(detail::report_from(crit, arg, thr,
                                          expected_counts(sens, arg, n1, n0)));
        break;
      }
      case ThresholdCriterion::SensEqSpec: {
        // sens - spec is non-decreasing along pts; interpolate at its zero.
        std::size_t k = 0;
        while (k + 1 < pts.size() && pts[k + 1].sens - pts[k + 1].spec < 0.0) ++k;
        if (k + 1 == pts.size()) {
          out.push_back(detail::report_from(
              crit, arg, pts[k].threshold,
              expected_counts(pts[k].sens, pts[k].spec, n1, n0)));
          break;
        }
        const double d0 = pts[k].sens - pts[k].spec;
        const double d1 = pts[k + 1].sens - pts[k + 1].spec;
        const double t = d1 == d0 ? 0.0 : (0.0 - d0) / (d1 - d0);
        const double sens = pts[k].sens + t * (pts[k + 1].sens - pts[k].sens);
        const double spec = pts[k].spec + t * (pts[k + 1].spec - pts[k].spec);
        const double thr = interp_threshold(pts[k].threshold, pts[k + 1].threshold, t);
        out.push_back(detail::report_from(crit, arg, thr,
                                          expected_counts(sens, spec, n1, n0)));
        break;
      }
      case ThresholdCriterion::MaxYouden: {
        std::size_t best = 0;
        for (std::size_t k = 1; k < pts.size(); ++k)
          if (pts[k].sens + pts[k].spec > pts[best].sens + pts[best].spec) best = k;
        out.push_back(detail::report_from(
            crit, arg, pts[best].threshold,
            expected_counts(pts[best].sens, pts[best].spec, n1, n0)));
        break;
      }
      case ThresholdCriterion::PriorPrevalence: {
        const double thr = arg > 0.0 ? arg : prior_prevalence;
        out.push_back(detail::report_from(crit, thr, thr, confusion_at(scored, thr)));
        break;
      }
      case ThresholdCriterion::Fixed: {
        out.push_back(detail::report_from(crit, arg, arg, confusion_at(scored, arg)));
        break;
      }
    }
  }
  return out;
}

inline std::vector<std::pair<ThresholdCriterion, double>> default_criteria(
    double prior_prevalence) {
  return {{ThresholdCriterion::SensTarget, 0.8},
          {ThresholdCriterion::SpecTarget, 0.8},
          {ThresholdCriterion::SensEqSpec, 0.0},
          {ThresholdCriterion::MaxYouden, 0.0},
          {ThresholdCriterion::PriorPrevalence, prior_prevalence},
          {ThresholdCriterion::Fixed, 0.5}};
}

inline double brier(const std::vector<Scored>& scored) {
  if (scored.empty()) throw Error("SingleClass", "empty scored set");
  double s = 0.0;
  for (const auto& x : scored) {
    const double d = x.score - static_cast<double>(x.label);
    s += d * d;
  }
  return s / static_cast<double>(scored.size());
}

struct CalibrationBin {
  double mean_pred = 0.0;
  double mean_obs = 0.0;
  std::size_t n = 0;
};

// Equal-width probability bins over [0,1]; empty bins are skipped.
inline std::vector<CalibrationBin> calibration_bins(const std::vector<Scored>& scored,
                                                    int n_bins = 10) {
  if (n_bins <= 0) throw Error("ConfigError", "n_bins must be positive");
  std::vector<CalibrationBin> bins(static_cast<std::size_t>(n_bins));
  for (const auto& s : scored) {
    int b = static_cast<int>(s.score * n_bins);
    b = std::clamp(b, 0, n_bins - 1);
    bins[b].mean_pred += s.score;
    bins[b].mean_obs += static_cast<double>(s.label);
    ++bins[b].n;
  }
  std::vector<CalibrationBin> out;
  for (auto& b : bins) {
    if (b.n == 0) continue;
    b.mean_pred /= static_cast<double>(b.n);
    b.mean_obs /= static_cast<double>(b.n);
    out.push_back(b);
  }
  return out;
}

inline double ece(const std::vector<Scored>& scored, int n_bins = 10) {
  const auto bins = calibration_bins(scored, n_bins);
  double total = 0.0, n = 0.0;
  for (const auto& b : bins) n += static_cast<double>(b.n);
  for (const auto& b : bins)
    total += static_cast<double>(b.n) / n * std::abs(b.mean_pred - b.mean_obs);
  return total;
}

struct CalibrationFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<CalibrationBin> curve;
};

// Least-squares line through the binned (mean predicted, observed rate)
// points, weighted by bin occupancy.
inline CalibrationFit calibration_fit(const std::vector<Scored>& scored, int n_bins = 10) {
  CalibrationFit fit;
  fit.curve = calibration_bins(scored, n_bins);
  double sw = 0, swx = 0, swy = 0, swxx = 0, swxy = 0;
  for (const auto& b : fit.curve) {
    const double w = static_cast<double>(b.n);
    sw += w;
    swx += w * b.mean_pred;
    swy += w * b.mean_obs;
    swxx += w * b.mean_pred * b.mean_pred;
    swxy += w * b.mean_pred * b.mean_obs;
  }
  const double denom = sw * swxx - swx * swx;
  if (std::abs(denom) < 1e-300) {  // single occupied bin: undefined slope
    fit.slope = std::numeric_limits<double>::quiet_NaN();
    fit.intercept = sw > 0 ? swy / sw : std::numeric_limits<double>::quiet_NaN();
    return fit;
  }
  fit.slope = (sw * swxy - swx * swy) / denom;
  fit.intercept = (swy - fit.slope * swx) / sw;
  return fit;
}

}  // namespace premod
