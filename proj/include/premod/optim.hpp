#pragma once

// Training-side pieces: focal/BCE losses as differentiable ops, the
// adaptive-moment optimizer and the reduce-on-plateau learning-rate schedule.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "premod/tensor.hpp"

namespace premod {

enum class LossKind { Focal, Bce };

inline std::string to_string(LossKind k) { return k == LossKind::Focal ? "focal" : "bce"; }

struct TrainHyper {
  double gamma = 2.0;
  double alpha = 0.25;
  double lr0 = 2e-4;
  int plateau_patience = 2;
  double plateau_factor = 5.0;
  int batch_size = 64;
  int max_epochs = 30;
  int early_stop_patience = 5;
  double dropout = 0.1;
  LossKind loss = LossKind::Focal;

  void validate() const {
    if (gamma < 0 || lr0 <= 0 || plateau_patience <= 0 || plateau_factor <= 1 ||
        batch_size <= 0 || max_epochs <= 0 || early_stop_patience <= 0)
      throw Error("ConfigError", "train hyperparameters must be positive");
    if (!(alpha > 0.0 && alpha < 1.0))
      throw Error("ConfigError", "alpha must be in (0,1)");
  }
};

constexpr double kProbClamp = 1e-12;

// FL = -alpha_t (1-p_t)^gamma log(p_t), p_t = p if y=1 else 1-p,
// alpha_t = alpha if y=1 else 1-alpha. Inputs clamped away from {0,1};
// gradient is zero inside the clamp.
inline ad::Tensor focal_loss(const ad::Tensor& p, const std::vector<int>& y,
                             double gamma, double alpha) {
  if (p.size() != y.size())
    throw Error("ShapeMismatch", "focal_loss: probabilities and labels differ");
  auto pp = p.node();
  auto labels = std::make_shared<std::vector<int>>(y);
  ad::Tensor out = ad::detail::make_op(
      p.rows(), p.cols(), {pp}, [pp, labels, gamma, alpha](ad::Node& self) {
        pp->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double raw = pp->value[i];
          if (raw <= kProbClamp || raw >= 1.0 - kProbClamp) continue;
          const int yi = (*labels)[i];
          const double pt = yi == 1 ? raw : 1.0 - raw;
          const double at = yi == 1 ? alpha : 1.0 - alpha;
          const double q = 1.0 - pt;
          // dFL/dpt = at * (gamma*q^(gamma-1)*log(pt) - q^gamma/pt)
          const double qg1 = gamma > 0.0 ? std::pow(q, gamma - 1.0) : 0.0;
          const double dpt = at * (gamma * qg1 * std::log(pt) - std::pow(q, gamma) / pt);
          const double dp = yi == 1 ? dpt : -dpt;
          pp->grad[i] += self.grad[i] * dp;
        }
      });
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double raw = std::min(std::max(p.data()[i], kProbClamp), 1.0 - kProbClamp);
    const double pt = y[i] == 1 ? raw : 1.0 - raw;
    const double at = y[i] == 1 ? alpha : 1.0 - alpha;
    out.data()[i] = -at * std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  return out;
}

inline ad::Tensor bce_loss(const ad::Tensor& p, const std::vector<int>& y) {
  if (p.size() != y.size())
    throw Error("ShapeMismatch", "bce_loss: probabilities and labels differ");
  auto pp = p.node();
  auto labels = std::make_shared<std::vector<int>>(y);
  ad::Tensor out =
      ad::detail::make_op(p.rows(), p.cols(), {pp}, [pp, labels](ad::Node& self) {
        pp->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double raw = pp->value[i];
          if (raw <= kProbClamp || raw >= 1.0 - kProbClamp) continue;
          const double dp = (*labels)[i] == 1 ? -1.0 / raw : 1.0 / (1.0 - raw);
          pp->grad[i] += self.grad[i] * dp;
        }
      });
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double raw = std::min(std::max(p.data()[i], kProbClamp), 1.0 - kProbClamp);
    out.data()[i] = y[i] == 1 ? -std::log(raw) : -std::log(1.0 - raw);
  }
  return out;
}

// Adaptive-moment update, decay rates 0.9/0.999, eps 1e-8.
struct AdamState {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  std::vector<std::vector<double>> m, v;

  explicit AdamState(double lr0 = 2e-4) : lr(lr0) {}
};

inline void optimizer_step(std::vector<ad::Tensor>& params, AdamState& st) {
  if (st.m.empty()) {
    st.m.resize(params.size());
    st.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      st.m[i].assign(params[i].size(), 0.0);
      st.v[i].assign(params[i].size(), 0.0);
    }
  }
  ++st.step_count;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.grad().size() != p.size()) continue;  // untouched this step
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = p.grad()[j];
      st.m[i][j] = st.beta1 * st.m[i][j] + (1.0 - st.beta1) * g;
      st.v[i][j] = st.beta2 * st.v[i][j] + (1.0 - st.beta2) * g * g;
      const double mh = st.m[i][j] / bc1;
      const double vh = st.v[i][j] / bc2;
      p.data()[j] -= st.lr * mh / (std::sqrt(vh) + st.eps);
    }
  }
}

// Divides lr by `factor` once validation loss has failed to improve for
// `patience` consecutive epochs.
struct PlateauScheduler {
  int patience = 2;
  double factor = 5.0;
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;

  // Returns true when the lr was reduced this epoch.
  bool step(AdamState& st, double val_loss) {
    if (val_loss < best) {
      best = val_loss;
      stale = 0;
      return false;
    }
    if (++stale >= patience) {
      st.lr /= factor;
      stale = 0;
      return true;
    }
    return false;
  }
};

}  // namespace premod
