#pragma once

#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace flowvid {

// Variance schedule and the sampling algebra built on it. All entry points
// are pure functions of their inputs; the stochastic branch of the sampler
// step only activates when a sigma entry is nonzero.
struct NoiseSchedule {
  int T = 0;
  std::vector<float> beta;       // per-step variance, in (0,1)
  std::vector<float> alpha_bar;  // cumulative product of (1 - beta), strictly decreasing
  std::vector<float> sigma;      // per-step sampler noise, all zero = deterministic

  static NoiseSchedule linear(int T, float beta_start, float beta_end);

  // t = -1 is the clean boundary and returns exactly 1.
  float abar(int t) const;
  void validate() const;

  // Uniformly spaced inference timesteps, descending, count entries.
  std::vector<int> inference_timesteps(int count) const;
};

// z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps. Accepts t = -1 (returns z0
// bit-exactly).
Tensor add_noise(const NoiseSchedule& s, const Tensor& z0, const Tensor& eps, int t);

// Mean squared error between predicted and true noise; differentiable.
Tensor diffusion_loss(const Tensor& eps_pred, const Tensor& eps);

// (z_t - sqrt(1-abar_t) eps) / sqrt(abar_t); abar must be > 0.
Tensor predict_z0(const NoiseSchedule& s, const Tensor& z_t, const Tensor& eps_pred, int t);

// (z_t - sqrt(abar_t) z0_hat) / sqrt(1-abar_t); abar must be < 1. Inverse of
// predict_z0 in its eps argument.
Tensor invert_to_eps(const NoiseSchedule& s, const Tensor& z_t, const Tensor& z0_hat, int t);

// Deterministic sampler update from t to t_prev (t_prev < t; -1 lands on the
// clean estimate). rng is only consulted when sigma[t] > 0.
Tensor ddim_step(const NoiseSchedule& s, const Tensor& z_t, const Tensor& eps_pred, int t,
                 int t_prev, Rng* rng = nullptr);

// eps_uncond + scale * (eps_cond - eps_uncond)
Tensor cfg_epsilon(const Tensor& eps_cond, const Tensor& eps_uncond, float scale);

}  // namespace flowvid
