#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diffusion/schedule.hpp"
#include "test_util.hpp"

using namespace flowvid;
using flowvid::testutil::bitwise_equal;
using flowvid::testutil::max_abs_diff;

namespace {
NoiseSchedule default_schedule() { return NoiseSchedule::linear(1000, 1e-4f, 0.02f); }
}  // namespace

TEST_CASE("schedule tables: betas in range, alpha_bar strictly decreasing") {
  NoiseSchedule s = default_schedule();
  double prod = 1.0;
  for (int t = 0; t < s.T; ++t) {
    CHECK(s.beta[t] > 0.0f);
    CHECK(s.beta[t] < 1.0f);
    prod *= 1.0 - (double)s.beta[t];
    CHECK(s.alpha_bar[t] == doctest::Approx((float)prod).epsilon(1e-5));
    if (t > 0) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    CHECK(s.sigma[t] == 0.0f);
  }
  CHECK(s.abar(-1) == 1.0f);
  CHECK_THROWS(s.abar(1000));
  CHECK_THROWS(s.abar(-2));
}

TEST_CASE("add_noise: clean boundary, zero signal, and range errors") {
  NoiseSchedule s = default_schedule();
  Rng rng(1);
  Tensor z0 = Tensor::randn({2, 3, 4, 4}, rng);
  Tensor eps = Tensor::randn({2, 3, 4, 4}, rng);

  // alpha_bar = 1 boundary returns z0 bit-exactly
  CHECK(bitwise_equal(add_noise(s, z0, eps, -1), z0));

  Tensor zero = Tensor::zeros(z0.shape());
  Tensor noised = add_noise(s, zero, eps, 500);
  const float cb = std::sqrt(1.0f - s.abar(500));
  for (size_t i = 0; i < noised.numel(); ++i)
    CHECK(noised.data()[i] == doctest::Approx(cb * eps.data()[i]));

  CHECK_THROWS(add_noise(s, z0, eps, 1000));
  CHECK_THROWS(add_noise(s, z0, eps, -5));
}

TEST_CASE("add_noise Monte-Carlo statistics match the closed form") {
  NoiseSchedule s = default_schedule();
  Rng rng(77);
  Tensor z0 = Tensor::full({16}, 0.7f);
  for (int t : {100, 800}) {
    const int draws = 10000;
    double mean = 0, m2 = 0;
    long n = 0;
    for (int d = 0; d < draws; ++d) {
      Tensor eps = Tensor::randn({16}, rng);
      Tensor zt = add_noise(s, z0, eps, t);
      for (size_t i = 0; i < zt.numel(); ++i) {
        mean += zt.data()[i];
        ++n;
      }
    }
    mean /= n;
    rng = Rng(77);
    for (int d = 0; d < draws; ++d) {
      Tensor eps = Tensor::randn({16}, rng);
      Tensor zt = add_noise(s, z0, eps, t);
      for (size_t i = 0; i < zt.numel(); ++i) {
        const double dd = zt.data()[i] - mean;
        m2 += dd * dd;
      }
    }
    const double stdev = std::sqrt(m2 / (n - 1));
    const double want_mean = std::sqrt((double)s.abar(t)) * 0.7;
    const double want_std = std::sqrt(1.0 - (double)s.abar(t));
    CHECK(std::fabs(mean - want_mean) < 0.01 * std::max(std::fabs(want_mean), want_std));
    CHECK(std::fabs(stdev - want_std) / want_std < 0.01);
  }
}

TEST_CASE("diffusion loss: exact zero, constant offset, loop oracle") {
  Rng rng(2);
  Tensor eps = Tensor::randn({3, 2, 4, 4}, rng);
  CHECK(diffusion_loss(eps, eps).item() == 0.0f);

  Tensor shifted = eps.clone();
  for (size_t i = 0; i < shifted.numel(); ++i) shifted.data()[i] += 1.0f;
  CHECK(diffusion_loss(shifted, eps).item() == doctest::Approx(1.0f));

  Tensor other = Tensor::randn(eps.shape(), rng);
  double oracle = 0;
  for (size_t i = 0; i < eps.numel(); ++i) {
    const double d = (double)other.data()[i] - eps.data()[i];
    oracle += d * d;
  }
  oracle /= (double)eps.numel();
  CHECK(std::fabs(diffusion_loss(other, eps).item() - oracle) < 1e-6);
}

TEST_CASE("predict_z0 and invert_to_eps are mutual inverses") {
  NoiseSchedule s = default_schedule();
  Rng rng(3);
  double worst_rt = 0, worst_inv = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int t = (int)(rng.next_u64() % s.T);
    Tensor z0 = Tensor::randn({2, 3, 4, 4}, rng);
    Tensor eps = Tensor::randn({2, 3, 4, 4}, rng);
    Tensor zt = add_noise(s, z0, eps, t);
    worst_rt = std::max(worst_rt, max_abs_diff(predict_z0(s, zt, eps, t), z0));
    Tensor z0h = predict_z0(s, zt, eps, t);
    worst_inv = std::max(worst_inv, max_abs_diff(invert_to_eps(s, zt, z0h, t), eps));
  }
  CHECK(worst_rt < 1e-4);
  CHECK(worst_inv < 1e-4);

  // eps_pred = 0 gives z_t / sqrt(abar)
  Tensor zt = Tensor::randn({4}, rng);
  Tensor z0h = predict_z0(s, zt, Tensor::zeros({4}), 321);
  for (int i = 0; i < 4; ++i)
    CHECK(z0h.data()[i] == doctest::Approx(zt.data()[i] / std::sqrt(s.abar(321))));

  // z_t = sqrt(abar) z0 makes the implied noise zero
  Tensor z0 = Tensor::randn({4}, rng);
  Tensor zt2({4});
  for (int i = 0; i < 4; ++i) zt2.data()[i] = std::sqrt(s.abar(321)) * z0.data()[i];
  CHECK(max_abs_diff(invert_to_eps(s, zt2, z0, 321), Tensor::zeros({4})) < 1e-5);

  // alpha_bar boundary errors
  CHECK_THROWS(invert_to_eps(s, zt, z0, -1));
}

TEST_CASE("ddim_step algebra") {
  NoiseSchedule s = default_schedule();
  Rng rng(4);
  Tensor z0 = Tensor::randn({2, 3, 4, 4}, rng);
  Tensor eps = Tensor::randn({2, 3, 4, 4}, rng);

  // stepping to the clean boundary with the true noise recovers z0
  Tensor zt = add_noise(s, z0, eps, 700);
  CHECK(max_abs_diff(ddim_step(s, zt, eps, 700, -1), z0) < 1e-4);

  // eps_pred = 0 scales by sqrt(abar_prev/abar_t)
  Tensor stepped = ddim_step(s, zt, Tensor::zeros(zt.shape()), 700, 400);
  const float factor = std::sqrt(s.abar(400) / s.abar(700));
  for (size_t i = 0; i < zt.numel(); ++i)
    CHECK(stepped.data()[i] == doctest::Approx(factor * zt.data()[i]).epsilon(1e-4));

  CHECK_THROWS_WITH_AS(ddim_step(s, zt, eps, 400, 700), doctest::Contains("precede"),
                       std::runtime_error);
}

TEST_CASE("25-step trajectory with an oracle denoiser reconstructs z0") {
  NoiseSchedule s = default_schedule();
  Rng rng(5);
  Tensor z0 = Tensor::randn({1, 3, 8, 8}, rng);
  Tensor eps0 = Tensor::randn(z0.shape(), rng);
  std::vector<int> ts = s.inference_timesteps(25);
  REQUIRE(ts.size() == 25);
  CHECK(ts.front() == 999);
  for (size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);

  Tensor z = add_noise(s, z0, eps0, ts[0]);
  for (size_t j = 0; j < ts.size(); ++j) {
    const int t = ts[j];
    const int t_prev = j + 1 < ts.size() ? ts[j + 1] : -1;
    Tensor eps_true = invert_to_eps(s, z, z0, t);  // oracle: knows the clean target
    z = ddim_step(s, z, eps_true, t, t_prev);
  }
  CHECK(max_abs_diff(z, z0) < 1e-3);
}

TEST_CASE("stochastic branch activates only with nonzero sigma") {
  NoiseSchedule s = default_schedule();
  Rng rng(6);
  Tensor z = Tensor::randn({8}, rng);
  Tensor eps = Tensor::randn({8}, rng);
  Tensor a = ddim_step(s, z, eps, 500, 300);
  Tensor b = ddim_step(s, z, eps, 500, 300);
  CHECK(bitwise_equal(a, b));

  s.sigma[500] = 0.1f;
  CHECK_THROWS_WITH_AS(ddim_step(s, z, eps, 500, 300), doctest::Contains("rng"),
                       std::runtime_error);
  Rng noise_rng(9);
  Tensor c = ddim_step(s, z, eps, 500, 300, &noise_rng);
  CHECK(!bitwise_equal(a, c));
}

TEST_CASE("classifier-free guidance arithmetic") {
  Rng rng(7);
  Tensor c = Tensor::randn({6}, rng);
  Tensor u = Tensor::randn({6}, rng);
  CHECK(bitwise_equal(cfg_epsilon(c, u, 1.0f), c));
  CHECK(bitwise_equal(cfg_epsilon(c, u, 0.0f), u));
  Tensor g = cfg_epsilon(c, u, 15.0f);
  for (int i = 0; i < 6; ++i)
    CHECK(g.data()[i] == doctest::Approx(u.data()[i] + 15.0f * (c.data()[i] - u.data()[i])));
}
