#pragma once

// Shapley-value attribution over input features and time buckets. Exact
// enumeration for small group partitions, permutation-sampling Monte Carlo
// for larger ones. The coalition value is the model logit with absent
// groups zeroed (zero is the encoder's own null), so efficiency reads
// sum(phi) = v(all) - v(empty).

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "premod/net.hpp"

namespace premod {

using CoalitionValue = std::function<double(const std::vector<bool>& keep)>;

constexpr int kMaxExactGroups = 12;

struct ShapleyEstimate {
  std::vector<double> phi;
  std::vector<double> se;  // zero for exact values
  double v_all = 0.0;
  double v_empty = 0.0;
};

// Exact Shapley values by full coalition enumeration (2^G evaluations).
inline ShapleyEstimate shapley_exact(const CoalitionValue& v, int n_groups) {
  if (n_groups < 1) throw Error("TooManyGroups", "need at least one group");
  if (n_groups > kMaxExactGroups)
    throw Error("TooManyGroups",
                "exact enumeration limited to " + std::to_string(kMaxExactGroups) +
                    " groups, got " + std::to_string(n_groups));
  const std::size_t n_masks = std::size_t{1} << n_groups;
  std::vector<double> value(n_masks);
  std::vector<bool> keep(static_cast<std::size_t>(n_groups));
  for (std::size_t mask = 0; mask < n_masks; ++mask) {
    for (int i = 0; i < n_groups; ++i) keep[i] = (mask >> i) & 1;
    value[mask] = v(keep);
  }

  std::vector<double> fact(static_cast<std::size_t>(n_groups) + 1, 1.0);
  for (std::size_t i = 1; i < fact.size(); ++i) fact[i] = fact[i - 1] * static_cast<double>(i);

  ShapleyEstimate est;
  est.phi.assign(static_cast<std::size_t>(n_groups), 0.0);
  est.se.assign(static_cast<std::size_t>(n_groups), 0.0);
  est.v_all = value[n_masks - 1];
  est.v_empty = value[0];
  for (std::size_t mask = 0; mask < n_masks; ++mask) {
    const int s = static_cast<int>(__builtin_popcountll(mask));
    const double w = fact[s] * fact[n_groups - 1 - s] / fact[n_groups];
    for (int i = 0; i < n_groups; ++i) {
      if ((mask >> i) & 1) continue;
      est.phi[i] += w * (value[mask | (std::size_t{1} << i)] - value[mask]);
    }
  }
  return est;
}

// Permutation-sampling estimator; unbiased, with per-element standard errors
// from the across-permutation variance.
inline ShapleyEstimate shapley_mc(const CoalitionValue& v, int n_groups,
                                  int n_permutations, std::uint64_t seed) {
  if (n_groups < 1) throw Error("TooManyGroups", "need at least one group");
  if (n_permutations < 1) throw Error("ConfigError", "need at least one permutation");
  Rng rng(child_seed(seed, "shapley_mc"));
  std::vector<double> sum(static_cast<std::size_t>(n_groups), 0.0);
  std::vector<double> sumsq(static_cast<std::size_t>(n_groups), 0.0);
  std::vector<int> order(static_cast<std::size_t>(n_groups));
  std::vector<bool> keep(static_cast<std::size_t>(n_groups));

  ShapleyEstimate est;
  std::fill(keep.begin(), keep.end(), false);
  est.v_empty = v(keep);
  std::fill(keep.begin(), keep.end(), true);
  est.v_all = v(keep);

  for (int p = 0; p < n_permutations; ++p) {
    for (int i = 0; i < n_groups; ++i) order[i] = i;
    rng.shuffle(order);
    std::fill(keep.begin(), keep.end(), false);
    double prev = est.v_empty;
    for (int i = 0; i < n_groups; ++i) {
      keep[order[i]] = true;
      const double cur = i + 1 == n_groups ? est.v_all : v(keep);
      const double delta = cur - prev;
      sum[order[i]] += delta;
      sumsq[order[i]] += delta * delta;
      prev = cur;
    }
  }
  est.phi.resize(static_cast<std::size_t>(n_groups));
  est.se.resize(static_cast<std::size_t>(n_groups));
  const double n = static_cast<double>(n_permutations);
  for (int i = 0; i < n_groups; ++i) {
    est.phi[i] = sum[i] / n;
    const double var = n > 1 ? (sumsq[i] / n - est.phi[i] * est.phi[i]) / (n - 1) : 0.0;
    est.se[i] = std::sqrt(std::max(0.0, var));
  }
  return est;
}

// ---- model-facing adapters

enum class ShapleyGrouping { Cell, Feature, Bucket };

// Builds the coalition value for one input: absent groups are zeroed and the
// masked matrix is scored; the attribution target is the logit.
inline CoalitionValue masked_logit(const BucketMatrix& x, const ModelParams& params,
                                   const std::vector<std::vector<std::size_t>>& groups) {
  return [&x, &params, groups](const std::vector<bool>& keep) {
    BucketMatrix masked = x;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (keep[g]) continue;
      for (std::size_t cell : groups[g]) masked.values[cell] = 0.0;
    }
    return predict_logit(masked, params);
  };
}

inline std::vector<std::vector<std::size_t>> make_groups(const BucketMatrix& x,
                                                         ShapleyGrouping how) {
  std::vector<std::vector<std::size_t>> groups;
  const std::size_t T = static_cast<std::size_t>(x.T), D = static_cast<std::size_t>(x.D());
  switch (how) {
    case ShapleyGrouping::Cell:
      groups.resize(T * D);
      for (std::size_t i = 0; i < T * D; ++i) groups[i] = {i};
      break;
    case ShapleyGrouping::Feature:
      groups.resize(D);
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t t = 0; t < T; ++t) groups[d].push_back(t * D + d);
      break;
    case ShapleyGrouping::Bucket:
      groups.resize(T);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t d = 0; d < D; ++d) groups[t].push_back(t * D + d);
      break;
  }
  return groups;
}

// Per-sample, per-bucket, per-feature attributions against the all-zero
// baseline.
struct AttributionTensor {
  std::size_t N = 0, T = 0, D = 0;
  std::vector<std::string> patient_ids;
  std::vector<double> values;  // N x T x D

  double& at(std::size_t n, std::size_t t, std::size_t d) {
    return values[(n * T + t) * D + d];
  }
  double at(std::size_t n, std::size_t t, std::size_t d) const {
    return values[(n * T + t) * D + d];
  }
};

// Cell-grouped Monte-Carlo attribution for a batch of inputs.
inline AttributionTensor attribute_cells(const std::vector<BucketMatrix>& xs,
                                         const ModelParams& params, int n_permutations,
                                         std::uint64_t seed) {
  AttributionTensor S;
  if (xs.empty()) return S;
  S.N = xs.size();
  S.T = static_cast<std::size_t>(xs.front().T);
  S.D = static_cast<std::size_t>(xs.front().D());
  S.values.assign(S.N * S.T * S.D, 0.0);
  for (std::size_t n = 0; n < xs.size(); ++n) {
    S.patient_ids.push_back(xs[n].patient_id);
    const auto groups = make_groups(xs[n], ShapleyGrouping::Cell);
    const auto est = shapley_mc(masked_logit(xs[n], params, groups),
                                static_cast<int>(groups.size()), n_permutations,
                                child_seed(seed, xs[n].patient_id));
    std::copy(est.phi.begin(), est.phi.end(), S.values.begin() + n * S.T * S.D);
  }
  return S;
}

// Mean |phi| over samples and time per feature, descending.
struct FeatureRank {
  std::size_t feature = 0;
  double mean_abs_phi = 0.0;
};

inline std::vector<FeatureRank> aggregate_feature(const AttributionTensor& S) {
  std::vector<FeatureRank> out(S.D);
  for (std::size_t d = 0; d < S.D; ++d) out[d].feature = d;
  if (S.N == 0) return out;
  for (std::size_t n = 0; n < S.N; ++n)
    for (std::size_t t = 0; t < S.T; ++t)
      for (std::size_t d = 0; d < S.D; ++d)
        out[d].mean_abs_phi += std::abs(S.at(n, t, d));
  const double denom = static_cast<double>(S.N * S.T);
  for (auto& f : out) f.mean_abs_phi /= denom;
  std::stable_sort(out.begin(), out.end(), [](const FeatureRank& a, const FeatureRank& b) {
    return a.mean_abs_phi > b.mean_abs_phi;
  });
  return out;
}

// Mean |phi| over samples and features per bucket (time-wise contribution).
inline std::vector<double> aggregate_time(const AttributionTensor& S) {
  std::vector<double> out(S.T, 0.0);
  if (S.N == 0) return out;
  for (std::size_t n = 0; n < S.N; ++n)
    for (std::size_t t = 0; t < S.T; ++t)
      for (std::size_t d = 0; d < S.D; ++d) out[t] += std::abs(S.at(n, t, d));
  for (auto& v : out) v /= static_cast<double>(S.N * S.D);
  return out;
}

}  // namespace premod
