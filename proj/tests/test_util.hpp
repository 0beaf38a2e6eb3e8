#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "core/tape.hpp"
#include "core/tensor.hpp"

namespace flowvid {
namespace testutil {

// Central finite differences against the recorded gradient. loss_fn must be
// a deterministic pure function of the parameters. Checks up to
// samples_per_param randomly chosen entries per parameter and returns the
// worst mixed rel/abs violation ratio (<= 1 passes).
struct GradCheckResult {
  double worst_ratio = 0.0;
  double worst_fd = 0.0, worst_an = 0.0;
  bool pass = true;
};

inline GradCheckResult gradcheck(const std::function<Tensor()>& loss_fn,
                                 std::vector<Tensor> params, Rng& rng,
                                 int samples_per_param = 4, float h = 1e-3f,
                                 double rtol = 1e-3, double atol = 1e-3) {
  Tape::instance().clear();
  for (Tensor& p : params) p.zero_grad();
  Tensor loss = loss_fn();
  Tape::instance().backward(loss);
  Tape::instance().clear();
  std::vector<Tensor> grads;
  for (Tensor& p : params) grads.push_back(p.grad_tensor());

  GradCheckResult res;
  NoGradGuard ng;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    for (int s = 0; s < samples_per_param; ++s) {
      const size_t idx = (size_t)(rng.next_u64() % p.numel());
      const float orig = p.data()[idx];
      p.data()[idx] = orig + h;
      const double lp = loss_fn().item();
      p.data()[idx] = orig - h;
      const double lm = loss_fn().item();
      p.data()[idx] = orig;
      const double fd = (lp - lm) / (2.0 * (double)h);
      const double an = grads[pi].data()[idx];
      const double tol = atol + rtol * std::max(std::fabs(fd), std::fabs(an));
      const double ratio = std::fabs(fd - an) / tol;
      if (ratio > res.worst_ratio) {
        res.worst_ratio = ratio;
        res.worst_fd = fd;
        res.worst_an = an;
      }
    }
  }
  for (Tensor& p : params) p.zero_grad();
  res.pass = res.worst_ratio <= 1.0;
  return res;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  const float* pa = a.data();
  const float* pb = b.data();
  for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs((double)pa[i] - pb[i]));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), a.numel() * sizeof(float)) == 0;
}

}  // namespace testutil
}  // namespace flowvid
