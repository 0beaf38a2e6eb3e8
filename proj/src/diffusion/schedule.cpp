#include "diffusion/schedule.hpp"

#include <cmath>

#include "core/check.hpp"
#include "core/ops.hpp"
#include "kernels/kernels.hpp"

namespace flowvid {

NoiseSchedule NoiseSchedule::linear(int T, float beta_start, float beta_end) {
  FV_CHECK(T >= 1, "schedule: T must be positive, got " << T);
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(T);
  s.alpha_bar.resize(T);
  s.sigma.assign(T, 0.0f);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    s.beta[t] = T == 1 ? beta_start
                       : beta_start + (beta_end - beta_start) * (float)t / (float)(T - 1);
    prod *= 1.0 - (double)s.beta[t];
    s.alpha_bar[t] = (float)prod;
  }
  s.validate();
  return s;
}

void NoiseSchedule::validate() const {
  FV_CHECK((int)beta.size() == T && (int)alpha_bar.size() == T && (int)sigma.size() == T,
           "schedule: table sizes disagree with T=" << T);
  float prev = 1.0f;
  for (int t = 0; t < T; ++t) {
    FV_CHECK(beta[t] > 0.0f && beta[t] < 1.0f, "schedule: beta[" << t << "]=" << beta[t]
                                                                 << " outside (0,1)");
    FV_CHECK(alpha_bar[t] < prev, "schedule: alpha_bar not strictly decreasing at t=" << t);
    FV_CHECK(alpha_bar[t] > 0.0f, "schedule: alpha_bar[" << t << "] underflowed to zero");
    prev = alpha_bar[t];
  }
}

float NoiseSchedule::abar(int t) const {
  if (t == -1) return 1.0f;
  FV_CHECK(t >= 0 && t < T, "timestep " << t << " out of range [0," << T << ")");
  return alpha_bar[t];
}

std::vector<int> NoiseSchedule::inference_timesteps(int count) const {
  FV_CHECK(count >= 1 && count <= T, "inference step count " << count << " vs T=" << T);
  std::vector<int> ts(count);
  for (int j = 0; j < count; ++j) ts[j] = (j + 1) * T / count - 1;
  std::reverse(ts.begin(), ts.end());
  return ts;
}

Tensor add_noise(const NoiseSchedule& s, const Tensor& z0, const Tensor& eps, int t) {
  FV_CHECK(z0.shape() == eps.shape(), "add_noise: shape mismatch " << shape_str(z0.shape())
                                                                   << " vs " << shape_str(eps.shape()));
  FV_CHECK(t >= -1 && t < s.T, "add_noise: timestep " << t << " out of range [-1," << s.T << ")");
  if (t == -1) return z0.clone();  // clean boundary, no arithmetic
  const float ab = s.abar(t);
  const float ca = std::sqrt(ab);
  const float cb = std::sqrt(1.0f - ab);
  Tensor y(z0.shape());
  const float* p0 = z0.data();
  const float* pe = eps.data();
  float* py = y.data();
  for (size_t i = 0; i < y.numel(); ++i) py[i] = ca * p0[i] + cb * pe[i];
  return y;
}

Tensor diffusion_loss(const Tensor& eps_pred, const Tensor& eps) {
  return ops::mse_loss(eps_pred, eps);
}

Tensor predict_z0(const NoiseSchedule& s, const Tensor& z_t, const Tensor& eps_pred, int t) {
  FV_CHECK(z_t.shape() == eps_pred.shape(), "predict_z0: shape mismatch "
                                                << shape_str(z_t.shape()) << " vs "
                                                << shape_str(eps_pred.shape()));
  const float ab = s.abar(t);
  FV_CHECK(ab > 0.0f, "predict_z0: alpha_bar is zero at t=" << t);
  const float inv = 1.0f / std::sqrt(ab);
  const float cb = std::sqrt(1.0f - ab);
  Tensor y(z_t.shape());
  const float* pz = z_t.data();
  const float* pe = eps_pred.data();
  float* py = y.data();
  for (size_t i = 0; i < y.numel(); ++i) py[i] = (pz[i] - cb * pe[i]) * inv;
  return y;
}

Tensor invert_to_eps(const NoiseSchedule& s, const Tensor& z_t, const Tensor& z0_hat, int t) {
  FV_CHECK(z_t.shape() == z0_hat.shape(), "invert_to_eps: shape mismatch "
                                              << shape_str(z_t.shape()) << " vs "
                                              << shape_str(z0_hat.shape()));
  const float ab = s.abar(t);
  FV_CHECK(ab < 1.0f, "invert_to_eps: alpha_bar is one at t=" << t);
  const float ca = std::sqrt(ab);
  const float inv = 1.0f / std::sqrt(1.0f - ab);
  Tensor y(z_t.shape());
  const float* pz = z_t.data();
  const float* p0 = z0_hat.data();
  float* py = y.data();
  for (size_t i = 0; i < y.numel(); ++i) py[i] = (pz[i] - ca * p0[i]) * inv;
  return y;
}

Tensor ddim_step(const NoiseSchedule& s, const Tensor& z_t, const Tensor& eps_pred, int t,
                 int t_prev, Rng* rng) {
  FV_CHECK(t_prev < t, "ddim_step: t_prev=" << t_prev << " must precede t=" << t);
  FV_CHECK(t >= 0 && t < s.T, "ddim_step: timestep " << t << " out of range");
  FV_CHECK(t_prev >= -1, "ddim_step: t_prev=" << t_prev << " below clean boundary");
  const float sig = s.sigma[t];
  const float ab_prev = s.abar(t_prev);
  const float dir_sq = 1.0f - ab_prev - sig * sig;
  FV_CHECK(dir_sq >= 0.0f, "ddim_step: sigma too large at t=" << t);
  Tensor z0 = predict_z0(s, z_t, eps_pred, t);
  const float ca = std::sqrt(ab_prev);
  const float cd = std::sqrt(dir_sq);
  Tensor y(z_t.shape());
  const float* p0 = z0.data();
  const float* pe = eps_pred.data();
  float* py = y.data();
  for (size_t i = 0; i < y.numel(); ++i) py[i] = ca * p0[i] + cd * pe[i];
  if (sig > 0.0f) {
    FV_CHECK(rng != nullptr, "ddim_step: stochastic sigma requires an rng");
    for (size_t i = 0; i < y.numel(); ++i) py[i] += sig * rng->normal();
  }
  return y;
}

Tensor cfg_epsilon(const Tensor& eps_cond, const Tensor& eps_uncond, float scale) {
  FV_CHECK(eps_cond.shape() == eps_uncond.shape(), "cfg_epsilon: shape mismatch "
                                                       << shape_str(eps_cond.shape()) << " vs "
                                                       << shape_str(eps_uncond.shape()));
  if (scale == 1.0f) return eps_cond.clone();
  if (scale == 0.0f) return eps_uncond.clone();
  Tensor y(eps_cond.shape());
  const float* pc = eps_cond.data();
  const float* pu = eps_uncond.data();
  float* py = y.data();
  for (size_t i = 0; i < y.numel(); ++i) py[i] = pu[i] + scale * (pc[i] - pu[i]);
  return y;
}

}  // namespace flowvid
