#pragma once

// LAMB: Adam direction plus decoupled weight decay, rescaled per parameter
// tensor by the trust ratio ||w|| / ||direction||.

#include <algorithm>
#include <cmath>
#include <numbers>

#include "genau/core/optim.hpp"

namespace genau::diffusion {

struct LambConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.1;
  double max_trust = 10.0;
};

// Trust ratio clamped to [0, max]; 1 when either norm is zero.
inline double trust_ratio(double w_norm, double r_norm, double max_trust) {
  if (w_norm == 0.0 || r_norm == 0.0) return 1.0;
  return std::clamp(w_norm / r_norm, 0.0, max_trust);
}

template <class T>
class Lamb {
 public:
  explicit Lamb(LambConfig cfg = {}) : cfg_(cfg) {}

  // Returns false (and leaves everything untouched) if any gradient is
  // non-finite.
  bool step(const optim::ParamList<T>& ps, double lr) {
    if (!optim::grads_finite(ps)) return false;
    state_.ensure(ps);
    ++state_.step;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(state_.step));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(state_.step));
    std::vector<double> r;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& w = ps[i]->value.vec();
      const auto& g = ps[i]->grad.vec();
      auto& m = state_.m[i].vec();
      auto& v = state_.v[i].vec();
      r.assign(w.size(), 0.0);
      double w_sq = 0, r_sq = 0;
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = static_cast<T>(cfg_.beta1 * m[j] + (1 - cfg_.beta1) * g[j]);
        v[j] = static_cast<T>(cfg_.beta2 * v[j] + (1 - cfg_.beta2) * double(g[j]) * g[j]);
        r[j] = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps) + cfg_.weight_decay * w[j];
        w_sq += double(w[j]) * w[j];
        r_sq += r[j] * r[j];
      }
      const double ratio = trust_ratio(std::sqrt(w_sq), std::sqrt(r_sq), cfg_.max_trust);
      last_ratio_ = ratio;
      for (std::size_t j = 0; j < w.size(); ++j) w[j] = static_cast<T>(w[j] - lr * ratio * r[j]);
    }
    return true;
  }
  bool step(const optim::ParamList<T>& ps) { return step(ps, cfg_.lr); }

  optim::MomentState<T>& state() { return state_; }
  const LambConfig& config() const { return cfg_; }
  double last_ratio() const { return last_ratio_; }

 private:
  LambConfig cfg_;
  optim::MomentState<T> state_;
  double last_ratio_ = 1.0;
};

// Linear warmup to the base rate, then cosine decay to zero at total_steps.
inline double cosine_lr(double base, long step, long warmup, long total_steps) {
  if (warmup > 0 && step < warmup) return base * double(step + 1) / double(warmup);
  if (total_steps <= warmup) return base;
  const double progress = std::min(1.0, double(step - warmup) / double(total_steps - warmup));
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace genau::diffusion
