#pragma once

// Linear-beta DDPM noise schedule, forward noising and single reverse steps.

#include <cmath>
#include <cstddef>
#include <vector>

#include "genau/core/error.hpp"
#include "genau/core/random.hpp"
#include "genau/core/tensor.hpp"

namespace genau::diffusion {

inline constexpr std::size_t kDefaultSteps = 1000;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 2e-2;

struct NoiseSchedule {
  std::vector<double> betas, alphas, alpha_bars;

  std::size_t size() const { return betas.size(); }
  // alpha_bar before step t; 1 for t = 0.
  double alpha_bar_prev(std::size_t t) const { return t == 0 ? 1.0 : alpha_bars[t - 1]; }
};

inline NoiseSchedule linear_schedule(std::size_t steps = kDefaultSteps, double beta_start = kDefaultBetaStart,
                                     double beta_end = kDefaultBetaEnd) {
  if (steps == 0) throw ConfigError("diffusion schedule needs at least one step");
  if (!(beta_start > 0 && beta_start < 1 && beta_end > 0 && beta_end < 1))
    throw ConfigError("diffusion betas must lie in (0, 1)");
  if (steps > 1 && !(beta_start < beta_end)) throw ConfigError("diffusion beta_start must be below beta_end");
  NoiseSchedule s;
  s.betas.resize(steps);
  for (std::size_t i = 0; i < steps; ++i)
    s.betas[i] = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * double(i) / double(steps - 1);
  double prod = 1.0;
  for (double b : s.betas) {
    s.alphas.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bars.push_back(prod);
  }
  return s;
}

// z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps
template <class T>
Tensor<T> q_sample(const Tensor<T>& z0, std::size_t t, const Tensor<T>& eps, const NoiseSchedule& s) {
  if (z0.shape() != eps.shape()) throw DimensionError("q_sample: z0 " + shape_str(z0.shape()) + " vs eps " + shape_str(eps.shape()));
  if (t >= s.size()) throw ContractError("diffusion", "timestep " + std::to_string(t) + " outside schedule of " + std::to_string(s.size()));
  const double a = std::sqrt(s.alpha_bars[t]), b = std::sqrt(1.0 - s.alpha_bars[t]);
  Tensor<T> out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(a * z0[i] + b * eps[i]);
  return out;
}

// Guided noise estimate (1 - s) eps_u + s eps_c, i.e. eps_u + s (eps_c - eps_u),
// written so that s = 0 and s = 1 return eps_u and eps_c exactly.
template <class T>
Tensor<T> guide(const Tensor<T>& eps_uncond, const Tensor<T>& eps_cond, double s) {
  if (eps_uncond.shape() != eps_cond.shape()) throw DimensionError("guide: shape mismatch");
  Tensor<T> out(eps_cond.shape());
  const T wu = static_cast<T>(1.0 - s), wc = static_cast<T>(s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = wu * eps_uncond[i] + wc * eps_cond[i];
  return out;
}

// Ancestral step between two retained timesteps with cumulative products
// ab_t and ab_prev (ab_prev = 1 for the last step). Noise variance is the
// posterior variance (1 - ab_prev) / (1 - ab_t) * beta; the last step adds none.
template <class T>
Tensor<T> ddpm_step_between(const Tensor<T>& z_t, const Tensor<T>& eps_hat, double ab_t, double ab_prev, Rng* rng) {
  const double alpha = ab_t / ab_prev, beta = 1.0 - alpha;
  const double c_eps = beta / std::sqrt(1.0 - ab_t), inv = 1.0 / std::sqrt(alpha);
  const bool last = ab_prev >= 1.0;
  const double sigma = last ? 0.0 : std::sqrt((1.0 - ab_prev) / (1.0 - ab_t) * beta);
  if (!last && !rng) throw ContractError("diffusion", "ddpm step needs an rng except at t = 0");
  Tensor<T> out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = inv * (z_t[i] - c_eps * eps_hat[i]);
    if (!last) v += sigma * rng->normal();
    out[i] = static_cast<T>(v);
  }
  return out;
}

// Ancestral step on the full schedule, from t to t - 1.
template <class T>
Tensor<T> ddpm_step(const Tensor<T>& z_t, std::size_t t, const Tensor<T>& eps_hat, const NoiseSchedule& s, Rng* rng) {
  if (t >= s.size()) throw ContractError("diffusion", "timestep " + std::to_string(t) + " outside schedule");
  const double alpha = s.alphas[t], beta = s.betas[t], ab = s.alpha_bars[t], ab_prev = s.alpha_bar_prev(t);
  const double c_eps = beta / std::sqrt(1.0 - ab), inv = 1.0 / std::sqrt(alpha);
  const double sigma = t == 0 ? 0.0 : std::sqrt((1.0 - ab_prev) / (1.0 - ab) * beta);
  if (t > 0 && !rng) throw ContractError("diffusion", "ddpm step needs an rng except at t = 0");
  Tensor<T> out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = inv * (z_t[i] - c_eps * eps_hat[i]);
    if (t > 0) v += sigma * rng->normal();
    out[i] = static_cast<T>(v);
  }
  return out;
}

// Deterministic DDIM (eta = 0) step between retained timesteps.
template <class T>
Tensor<T> ddim_step_between(const Tensor<T>& z_t, const Tensor<T>& eps_hat, double ab_t, double ab_prev) {
  const double sa = std::sqrt(ab_t), sb = std::sqrt(1.0 - ab_t);
  const double pa = std::sqrt(ab_prev), pb = std::sqrt(1.0 - ab_prev);
  Tensor<T> out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0 = (z_t[i] - sb * eps_hat[i]) / sa;
    out[i] = static_cast<T>(pa * x0 + pb * eps_hat[i]);
  }
  return out;
}

// `steps` timesteps spread evenly over [0, T), ascending, always including 0
// and T - 1.
inline std::vector<std::size_t> respaced_timesteps(std::size_t total, std::size_t steps) {
  if (steps == 0 || steps > total)
    throw ConfigError("sampling steps must be in [1, " + std::to_string(total) + "], got " + std::to_string(steps));
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t t =
        steps == 1 ? total - 1 : static_cast<std::size_t>(std::llround(double(i) * double(total - 1) / double(steps - 1)));
    if (out.empty() || out.back() != t) out.push_back(t);
  }
  return out;
}

}  // namespace genau::diffusion
