#pragma once

// Training and evaluation orchestration: control downsampling, per-fold
// focal-loss training with the plateau schedule and early stopping,
// leave-one-site-out evaluation with nested k-fold cross-validation,
// lead-time-specific testing, and the one-factor-at-a-time grid search.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "premod/encoder.hpp"
#include "premod/io.hpp"
#include "premod/metrics.hpp"
#include "premod/net.hpp"
#include "premod/optim.hpp"
#include "premod/recal.hpp"

namespace premod {

inline int env_threads() {
  if (const char* s = std::getenv("PREMOD_THREADS")) {
    const int n = std::atoi(s);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs tasks 0..n-1 on up to `threads` workers. Results must be written to
// pre-sized slots so the merge order never depends on scheduling.
template <typename Fn>
inline void parallel_for(std::size_t n, int threads, Fn&& fn) {
  threads = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---- split planning

struct SplitPlan {
  std::string held_out_site;
  std::vector<std::string> dev_sites;
  std::vector<std::vector<std::string>> folds;  // disjoint patient-id partitions
  std::uint64_t seed = 0;
};

// Label-stratified patient-id partition of the development sites. The anchor
// site (the Rochester analog) is part of every development set and can never
// be held out.
inline SplitPlan make_split_plan(const std::vector<BucketMatrix>& all,
                                 const std::string& held_out_site,
                                 const std::string& anchor_site, int n_folds,
                                 std::uint64_t seed) {
  if (n_folds < 2) throw Error("ConfigError", "need at least 2 folds");
  if (held_out_site == anchor_site)
    throw Error("ConfigError", "the anchor site cannot be held out");
  SplitPlan plan;
  plan.held_out_site = held_out_site;
  plan.seed = seed;
  std::vector<std::string> cases, controls;
  bool saw_holdout = false;
  std::map<std::string, bool> sites;
  for (const auto& m : all) {
    sites[m.site] = true;
    if (m.site == held_out_site) {
      saw_holdout = true;
      continue;
    }
    (m.label == 1 ? cases : controls).push_back(m.patient_id);
  }
  if (!saw_holdout) throw Error("ConfigError", "unknown held-out site " + held_out_site);
  for (const auto& [site, _] : sites)
    if (site != held_out_site) plan.dev_sites.push_back(site);

  plan.folds.assign(static_cast<std::size_t>(n_folds), {});
  Rng rng(child_seed(seed, "split/" + held_out_site));
  for (auto* group : {&cases, &controls}) {
    std::sort(group->begin(), group->end());
    rng.shuffle(*group);
    for (std::size_t i = 0; i < group->size(); ++i)
      plan.folds[i % static_cast<std::size_t>(n_folds)].push_back((*group)[i]);
  }
  return plan;
}

// ---- downsampling

// Keeps every case and samples controls without replacement down to
// `controls_per_case`; pass <= 0 for no resampling. Input order independent.
inline std::vector<std::size_t> downsample(const std::vector<BucketMatrix>& mats,
                                           const std::vector<std::size_t>& candidate,
                                           double controls_per_case, std::uint64_t seed) {
  std::vector<std::size_t> cases, controls;
  for (std::size_t i : candidate)
    (mats[i].label == 1 ? cases : controls).push_back(i);
  auto by_id = [&](std::size_t a, std::size_t b) {
    return mats[a].patient_id < mats[b].patient_id;
  };
  std::sort(cases.begin(), cases.end(), by_id);
  std::sort(controls.begin(), controls.end(), by_id);
  if (controls_per_case > 0.0) {
    Rng rng(child_seed(seed, "downsample"));
    rng.shuffle(controls);
    const auto want = static_cast<std::size_t>(
        std::llround(controls_per_case * static_cast<double>(cases.size())));
    if (controls.size() > want) controls.resize(want);
    std::sort(controls.begin(), controls.end(), by_id);
  }
  std::vector<std::size_t> out = cases;
  out.insert(out.end(), controls.begin(), controls.end());
  return out;
}

// ---- per-fold training

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_auroc = 0.0;
  double lr = 0.0;
};

struct FoldResult {
  ModelParams params;
  CheckpointMeta meta;
  std::vector<EpochLog> log;
  double best_val_loss = 0.0;
  double val_auroc = 0.0;  // at the best epoch
};

inline ModelParams clone_params(const ModelParams& src) {
  ModelParams dst = init_params(src.cfg, 0);
  auto s = src.all();
  auto d = dst.all();
  for (std::size_t i = 0; i < s.size(); ++i) d[i].data() = s[i].data();
  return dst;
}

namespace detail {

inline double eval_loss_sum(const std::vector<const BucketMatrix*>& mats,
                            const ModelParams& params, const TrainHyper& hyper,
                            std::vector<Scored>* scored = nullptr) {
  ad::NoGradGuard ng;
  double total = 0.0;
  for (const auto* m : mats) {
    const auto out = forward(*m, params);
    const double p = std::min(std::max(out.prob, kProbClamp), 1.0 - kProbClamp);
    const double pt = m->label == 1 ? p : 1.0 - p;
    if (hyper.loss == LossKind::Focal) {
      const double at = m->label == 1 ? hyper.alpha : 1.0 - hyper.alpha;
      total += -at * std::pow(1.0 - pt, hyper.gamma) * std::log(pt);
    } else {
      total += -std::log(pt);
    }
    if (scored) scored->push_back({out.prob, m->label});
  }
  return total;
}

}  // namespace detail

// Mini-batch training on raw (lead-complete) matrices with the plateau lr
// schedule and early stopping on validation loss; returns the best-val
// checkpoint. Throws Diverged on a non-finite loss.
inline FoldResult train_fold(const std::vector<const BucketMatrix*>& train,
                             const std::vector<const BucketMatrix*>& val,
                             const ModelConfig& model_cfg, const TrainHyper& hyper,
                             std::uint64_t seed) {
  hyper.validate();
  for (const auto* m : train)
    if (!m->raw())
      throw Error("ConfigError", "training must see raw matrices, not lead-excluded ones");
  ModelParams params = init_params(model_cfg, child_seed(seed, "init"));
  Rng shuffle_rng(child_seed(seed, "shuffle"));
  Rng dropout_rng(child_seed(seed, "dropout"));
  AdamState adam(hyper.lr0);
  PlateauScheduler plateau{hyper.plateau_patience, hyper.plateau_factor};

  FoldResult res;
  res.best_val_loss = std::numeric_limits<double>::infinity();
  ModelParams best = clone_params(params);
  double best_auroc = 0.5;
  int since_best = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  auto all_params = params.all();

  long n_cases = 0;
  for (const auto* m : train) n_cases += m->label;

  for (int epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double train_loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
      std::vector<ad::Tensor> probs;
      std::vector<int> labels;
      ForwardCtx ctx{true, &dropout_rng, hyper.dropout};
      for (std::size_t i = start; i < stop; ++i) {
        const auto* m = train[order[i]];
        probs.push_back(forward(*m, params, ctx).prob_t);
        labels.push_back(m->label);
      }
      ad::Tensor batch = concat_cols(probs);
      ad::Tensor losses = hyper.loss == LossKind::Focal
                              ? focal_loss(batch, labels, hyper.gamma, hyper.alpha)
                              : bce_loss(batch, labels);
      ad::Tensor loss = mean_all(losses);
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw Error("Diverged", "non-finite training loss at epoch " +
                                    std::to_string(epoch));
      train_loss_sum += lv * static_cast<double>(stop - start);
      seen += stop - start;
      ad::backward(loss);
      optimizer_step(all_params, adam);
      params.zero_grad();
    }

    std::vector<Scored> val_scored;
    const double val_loss =
        detail::eval_loss_sum(val, params, hyper, &val_scored) /
        std::max<std::size_t>(1, val.size());
    double val_auroc = 0.5;
    bool two_classes = true;
    try {
      val_auroc = auroc(val_scored);
    } catch (const Error&) {
      two_classes = false;
    }
    (void)two_classes;
    res.log.push_back({epoch, train_loss_sum / static_cast<double>(std::max<std::size_t>(1, seen)),
                       val_loss, val_auroc, adam.lr});

    if (val_loss < res.best_val_loss) {
      res.best_val_loss = val_loss;
      best = clone_params(params);
      best_auroc = val_auroc;
      since_best = 0;
    } else if (++since_best >= hyper.early_stop_patience) {
      break;
    }
    plateau.step(adam, val_loss);
  }

  res.params = std::move(best);
  res.val_auroc = best_auroc;
  res.meta.pi_src_realized =
      n_cases > 0 && static_cast<long>(train.size()) > n_cases
          ? static_cast<double>(n_cases) / static_cast<double>(static_cast<long>(train.size()) - n_cases)
          : 1.0;
  return res;
}

// ---- LOSO evaluation

struct EvalSummary {
  std::string site;
  double lead_years = 0.0;
  std::vector<double> model_aurocs;  // one per fold-model
  double mean_auroc = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  double brier = 0.0, ece = 0.0, cal_slope = 0.0, cal_intercept = 0.0;
  std::vector<io::ScoredPatient> scores;           // all models x patients
  std::vector<io::ScoredPatient> ensemble_scores;  // per-patient mean prob (fold = -1)
};

// Two-sided 97.5% Student-t quantiles for small df; ~1.96 beyond the table.
inline double t_quantile_975(int df) {
  static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365,
                                 2.306,  2.262, 2.228, 2.201, 2.179, 2.160, 2.145,
                                 2.131,  2.120, 2.110, 2.101, 2.093, 2.086, 2.080,
                                 2.074,  2.069, 2.064, 2.060, 2.056, 2.052, 2.048,
                                 2.045,  2.042};
  if (df < 1) throw Error("OutOfRange", "t quantile needs df >= 1");
  if (df <= 30) return table[df - 1];
  return 1.96;
}

struct MeanCi {
  double mean = 0.0, lo = 0.0, hi = 0.0;
};

inline MeanCi mean_ci(const std::vector<double>& xs) {
  MeanCi r;
  const auto n = static_cast<double>(xs.size());
  for (double x : xs) r.mean += x;
  r.mean /= n;
  if (xs.size() < 2) {
    r.lo = r.hi = r.mean;
    return r;
  }
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double half = t_quantile_975(static_cast<int>(xs.size()) - 1) * sd / std::sqrt(n);
  r.lo = r.mean - half;
  r.hi = r.mean + half;
  return r;
}

// Scores every test matrix (already lead-excluded) with every model and
// aggregates per-model AUROCs plus ensemble calibration metrics. When a
// recalibration spec is supplied, each model's logit is shifted with its own
// realized training prior.
inline EvalSummary summarize_eval(const std::string& site, double lead_years,
                                  const std::vector<FoldResult>& models,
                                  const std::vector<BucketMatrix>& test,
                                  const double* pi_tar = nullptr, int threads = 1) {
  EvalSummary s;
  s.site = site;
  s.lead_years = lead_years;
  std::vector<std::vector<io::ScoredPatient>> per_model(models.size());
  parallel_for(models.size(), threads, [&](std::size_t mi) {
    const auto& fr = models[mi];
    std::vector<io::ScoredPatient> rows;
    rows.reserve(test.size());
    for (const auto& m : test) {
      double z = predict_logit(m, fr.params);
      if (pi_tar) {
        const RecalSpec rc{fr.meta.pi_src_realized > 0 ? fr.meta.pi_src_realized : 0.1,
                           *pi_tar};
        z = recalibrate_logit(z, rc);
      }
      const double p = 1.0 / (1.0 + std::exp(-z));
      rows.push_back({m.patient_id, m.site, static_cast<int>(mi), m.label, z, p});
    }
    per_model[mi] = std::move(rows);
  });

  std::map<std::string, std::pair<double, int>> mean_prob;  // id -> (sum prob, label)
  for (std::size_t mi = 0; mi < per_model.size(); ++mi) {
    std::vector<Scored> sc;
    for (const auto& r : per_model[mi]) {
      sc.push_back({r.prob, r.label});
      auto& e = mean_prob[r.patient_id];
      e.first += r.prob;
      e.second = r.label;
    }
    s.model_aurocs.push_back(auroc(sc));
    s.scores.insert(s.scores.end(), per_model[mi].begin(), per_model[mi].end());
  }
  const auto ci = mean_ci(s.model_aurocs);
  s.mean_auroc = ci.mean;
  s.ci_lo = ci.lo;
  s.ci_hi = ci.hi;

  std::vector<Scored> ens;
  for (const auto& [id, e] : mean_prob) {
    const double p = e.first / static_cast<double>(models.size());
    ens.push_back({p, e.second});
    const double z = std::log(std::max(p, 1e-15) / std::max(1.0 - p, 1e-15));
    s.ensemble_scores.push_back({id, site, -1, e.second, z, p});
  }
  s.brier = brier(ens);
  s.ece = ece(ens);
  const auto fit = calibration_fit(ens);
  s.cal_slope = fit.slope;
  s.cal_intercept = fit.intercept;
  return s;
}

struct LosoIteration {
  SplitPlan plan;
  std::vector<FoldResult> models;
  std::vector<EvalSummary> by_lead;
};

struct LosoSetup {
  ModelConfig model;
  TrainHyper hyper;
  int n_folds = 10;
  std::string anchor_site;
  double downsample_ratio = 10.0;
  std::vector<double> lead_years{1.0, 2.0, 3.0};
  std::uint64_t seed = 1;
  bool shuffle_train_labels = false;  // null-signal control
  const double* pi_tar = nullptr;     // optional recalibration target odds
};

// Trains the per-fold models for one held-out site. Training always sees
// raw matrices; fold membership, downsampling and initialization all derive
// from named child seeds.
inline std::vector<FoldResult> train_loso_site(const std::vector<BucketMatrix>& all,
                                               const SplitPlan& plan,
                                               const LosoSetup& setup, int threads) {
  std::map<std::string, std::size_t> ix;
  for (std::size_t i = 0; i < all.size(); ++i) ix[all[i].patient_id] = i;

  // Null-signal control: permute training labels (test labels untouched).
  std::vector<int> train_label(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) train_label[i] = all[i].label;
  if (setup.shuffle_train_labels) {
    std::vector<std::size_t> dev_ix;
    for (const auto& fold : plan.folds)
      for (const auto& id : fold) dev_ix.push_back(ix.at(id));
    std::sort(dev_ix.begin(), dev_ix.end());
    std::vector<int> labels;
    for (std::size_t i : dev_ix) labels.push_back(all[i].label);
    Rng rng(child_seed(setup.seed, "shuffle_labels"));
    rng.shuffle(labels);
    for (std::size_t k = 0; k < dev_ix.size(); ++k) train_label[dev_ix[k]] = labels[k];
  }

  std::vector<std::unique_ptr<std::vector<BucketMatrix>>> relabeled(plan.folds.size());
  std::vector<FoldResult> models(plan.folds.size());
  parallel_for(plan.folds.size(), threads, [&](std::size_t f) {
    std::vector<std::size_t> train_candidates;
    std::vector<const BucketMatrix*> val;
    auto holder = std::make_unique<std::vector<BucketMatrix>>();
    for (std::size_t g = 0; g < plan.folds.size(); ++g)
      for (const auto& id : plan.folds[g]) {
        const std::size_t i = ix.at(id);
        if (g == f)
          val.push_back(&all[i]);
        else
          train_candidates.push_back(i);
      }
    const std::uint64_t fold_seed =
        child_seed(setup.seed, "fold/" + plan.held_out_site + "/" + std::to_string(f));
    auto chosen =
        downsample(all, train_candidates, setup.downsample_ratio, fold_seed);
    holder->reserve(chosen.size());
    std::vector<const BucketMatrix*> train;
    for (std::size_t i : chosen) {
      if (train_label[i] != all[i].label) {
        holder->push_back(all[i]);
        holder->back().label = train_label[i];
        train.push_back(&holder->back());
      } else {
        train.push_back(&all[i]);
      }
    }
    models[f] = train_fold(train, val, setup.model, setup.hyper, fold_seed);
    relabeled[f] = std::move(holder);
  });
  return models;
}

// Full LOSO pass: one iteration per non-anchor site, each with n_folds
// models evaluated at every lead time on the held-out site.
inline std::vector<LosoIteration> evaluate_loso(const std::vector<BucketMatrix>& all,
                                                const LosoSetup& setup,
                                                int threads = 1) {
  std::map<std::string, std::vector<std::size_t>> by_site;
  for (std::size_t i = 0; i < all.size(); ++i) by_site[all[i].site].push_back(i);
  if (by_site.size() < 2) throw Error("ConfigError", "LOSO needs at least 2 sites");
  const std::string anchor =
      setup.anchor_site.empty() ? by_site.begin()->first : setup.anchor_site;
  if (!by_site.count(anchor)) throw Error("ConfigError", "unknown anchor site " + anchor);

  std::vector<LosoIteration> out;
  for (const auto& [site, ixs] : by_site) {
    if (site == anchor) continue;
    LosoIteration iter;
    iter.plan = make_split_plan(all, site, anchor, setup.n_folds, setup.seed);
    iter.models = train_loso_site(all, iter.plan, setup, threads);
    for (double lead : setup.lead_years) {
      std::vector<BucketMatrix> test;
      test.reserve(ixs.size());
      for (std::size_t i : ixs) test.push_back(exclude_lead_time(all[i], lead));
      iter.by_lead.push_back(
          summarize_eval(site, lead, iter.models, test, setup.pi_tar, threads));
    }
    out.push_back(std::move(iter));
  }
  return out;
}

// Pools per-site summaries into the overall row; default pools all
// site x model AUROCs, the alternative pools the per-site means.
inline EvalSummary pool_overall(const std::vector<const EvalSummary*>& sites,
                                bool site_mean_pooling = false) {
  EvalSummary s;
  s.site = "overall";
  if (sites.empty()) return s;
  s.lead_years = sites.front()->lead_years;
  std::vector<Scored> ens;
  double b = 0, e = 0, sl = 0, in = 0;
  for (const auto* x : sites) {
    if (site_mean_pooling)
      s.model_aurocs.push_back(x->mean_auroc);
    else
      s.model_aurocs.insert(s.model_aurocs.end(), x->model_aurocs.begin(),
                            x->model_aurocs.end());
    b += x->brier;
    e += x->ece;
    sl += x->cal_slope;
    in += x->cal_intercept;
    for (const auto& r : x->ensemble_scores) ens.push_back({r.prob, r.label});
  }
  const auto ci = mean_ci(s.model_aurocs);
  s.mean_auroc = ci.mean;
  s.ci_lo = ci.lo;
  s.ci_hi = ci.hi;
  const auto n = static_cast<double>(sites.size());
  s.brier = b / n;
  s.ece = e / n;
  s.cal_slope = sl / n;
  s.cal_intercept = in / n;
  return s;
}

// ---- hyperparameter grid (one factor at a time around the base row)

struct GridPoint {
  std::string factor;
  std::string value;
  double mean_val_auroc = 0.0;
};

struct GridSpace {
  std::vector<int> taus{7, 90};
  std::vector<int> n_layers{1, 4, 8};
  std::vector<int> n_heads{2, 8, 16};
  std::vector<int> d_models{16, 64};
  std::vector<int> agg_heads{1, 3, 4};
  bool include_cls = true;
  std::vector<double> ratios{1.0, 5.0, 20.0, -1.0};  // -1 = no resampling
  std::vector<double> lrs{1e-4, 3e-4, 5e-4};
  std::vector<int> batch_sizes{16, 32, 128};
  bool include_bce = true;
};

struct GridDataset {
  std::vector<LabeledPatient> dev;  // un-encoded; tau sweeps re-encode
  std::vector<std::string> skip_prefixes;
  std::size_t max_codes = 64, max_labs = 32;
  long window_days = 1440;  // horizon covered by T buckets at any tau
};

namespace detail {

// Mean k-fold validation AUROC for one configuration.
inline double grid_cv_auroc(const GridDataset& data, int tau, const ModelConfig& base_model,
                            const TrainHyper& hyper, double ratio, int folds,
                            std::uint64_t seed, int threads) {
  EncoderConfig enc;
  enc.tau_days = tau;
  enc.T = static_cast<int>(std::max<long>(1, data.window_days / tau));
  build_vocab(data.dev, data.skip_prefixes, data.max_codes, data.max_labs, enc);
  enc.lab_standardization = fit_lab_standardization(data.dev, enc);
  std::vector<BucketMatrix> mats;
  mats.reserve(data.dev.size());
  for (const auto& lp : data.dev) mats.push_back(encode(lp, enc));

  ModelConfig mc = base_model;
  mc.T = enc.T;
  mc.D = enc.D();

  SplitPlan plan;
  plan.held_out_site = "";
  plan.seed = seed;
  std::vector<std::string> cases, controls;
  for (const auto& m : mats) (m.label == 1 ? cases : controls).push_back(m.patient_id);
  plan.folds.assign(static_cast<std::size_t>(folds), {});
  Rng rng(child_seed(seed, "grid_split"));
  for (auto* group : {&cases, &controls}) {
    std::sort(group->begin(), group->end());
    rng.shuffle(*group);
    for (std::size_t i = 0; i < group->size(); ++i)
      plan.folds[i % static_cast<std::size_t>(folds)].push_back((*group)[i]);
  }

  std::map<std::string, std::size_t> ix;
  for (std::size_t i = 0; i < mats.size(); ++i) ix[mats[i].patient_id] = i;
  std::vector<double> aurocs(static_cast<std::size_t>(folds));
  parallel_for(static_cast<std::size_t>(folds), threads, [&](std::size_t f) {
    std::vector<std::size_t> train_candidates;
    std::vector<const BucketMatrix*> val;
    for (std::size_t g = 0; g < plan.folds.size(); ++g)
      for (const auto& id : plan.folds[g])
        if (g == f)
          val.push_back(&mats[ix.at(id)]);
        else
          train_candidates.push_back(ix.at(id));
    const std::uint64_t fold_seed = child_seed(seed, "grid_fold/" + std::to_string(f));
    auto chosen = downsample(mats, train_candidates, ratio, fold_seed);
    std::vector<const BucketMatrix*> train;
    for (std::size_t i : chosen) train.push_back(&mats[i]);
    aurocs[f] = train_fold(train, val, mc, hyper, fold_seed).val_auroc;
  });
  double s = 0.0;
  for (double a : aurocs) s += a;
  return s / static_cast<double>(folds);
}

}  // namespace detail

// One-factor-at-a-time sweep around the base configuration, ranked by mean
// validation AUROC; the base row always appears.
inline std::vector<GridPoint> grid_search(const GridSpace& space, const GridDataset& data,
                                          int base_tau, const ModelConfig& base_model,
                                          const TrainHyper& base_hyper, double base_ratio,
                                          int folds, std::uint64_t seed, int threads = 1) {
  std::vector<GridPoint> out;
  auto run = [&](const std::string& factor, const std::string& value, int tau,
                 const ModelConfig& mc, const TrainHyper& hy, double ratio) {
    out.push_back({factor, value,
                   detail::grid_cv_auroc(data, tau, mc, hy, ratio, folds,
                                         child_seed(seed, factor + "=" + value), threads)});
  };
  char buf[32];
  run("base", "base", base_tau, base_model, base_hyper, base_ratio);
  for (int tau : space.taus)
    run("tau", std::to_string(tau), tau, base_model, base_hyper, base_ratio);
  for (int l : space.n_layers) {
    ModelConfig mc = base_model;
    mc.n_layers = l;
    run("n_layers", std::to_string(l), base_tau, mc, base_hyper, base_ratio);
  }
  for (int h : space.n_heads) {
    ModelConfig mc = base_model;
    if (mc.d_model % h != 0) continue;
    mc.n_heads = h;
    run("n_heads", std::to_string(h), base_tau, mc, base_hyper, base_ratio);
  }
  for (int d : space.d_models) {
    ModelConfig mc = base_model;
    mc.d_model = d;
    if (d % mc.n_heads != 0) mc.n_heads = 2;
    run("d_model", std::to_string(d), base_tau, mc, base_hyper, base_ratio);
  }
  for (int g : space.agg_heads) {
    ModelConfig mc = base_model;
    mc.n_agg_heads = g;
    run("agg_heads", std::to_string(g), base_tau, mc, base_hyper, base_ratio);
  }
  if (space.include_cls) {
    ModelConfig mc = base_model;
    mc.use_cls = true;
    run("agg_heads", "cls", base_tau, mc, base_hyper, base_ratio);
  }
  for (double r : space.ratios) {
    std::snprintf(buf, sizeof buf, "%g", r);
    run("downsample_ratio", r > 0 ? std::string("1:") + buf : "none", base_tau,
        base_model, base_hyper, r);
  }
  for (double lr : space.lrs) {
    TrainHyper hy = base_hyper;
    hy.lr0 = lr;
    std::snprintf(buf, sizeof buf, "%g", lr);
    run("lr0", buf, base_tau, base_model, hy, base_ratio);
  }
  for (int b : space.batch_sizes) {
    TrainHyper hy = base_hyper;
    hy.batch_size = b;
    run("batch_size", std::to_string(b), base_tau, base_model, hy, base_ratio);
  }
  if (space.include_bce) {
    TrainHyper hy = base_hyper;
    hy.loss = LossKind::Bce;
    run("loss", "bce", base_tau, base_model, hy, base_ratio);
  }
  std::stable_sort(out.begin(), out.end(), [](const GridPoint& a, const GridPoint& b) {
    return a.mean_val_auroc > b.mean_val_auroc;
  });
  return out;
}

}  // namespace premod
