#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/ops.hpp"
#include "flow/flow_field.hpp"
#include "flow/flow_net.hpp"
#include "test_util.hpp"

using namespace flowvid;
using flowvid::testutil::bitwise_equal;
using flowvid::testutil::max_abs_diff;

namespace {

FlowPair constant_flow(int pairs, int H, int W, float dx, float dy) {
  FlowPair f;
  f.forward = Tensor(Shape{pairs, 2, H, W});
  f.backward = Tensor(Shape{pairs, 2, H, W});
  const size_t hw = (size_t)H * W;
  for (int k = 0; k < pairs; ++k)
    for (size_t i = 0; i < hw; ++i) {
      f.forward.data()[k * 2 * hw + i] = dx;
      f.forward.data()[k * 2 * hw + hw + i] = dy;
      f.backward.data()[k * 2 * hw + i] = -dx;
      f.backward.data()[k * 2 * hw + hw + i] = -dy;
    }
  return f;
}

}  // namespace

TEST_CASE("estimate_corrupted_flow zeroes the union hole") {
  Rng rng(1);
  const int N = 3, H = 8, W = 8;
  FlowPair src;
  src.forward = Tensor::randn({N - 1, 2, H, W}, rng);
  src.backward = Tensor::randn({N - 1, 2, H, W}, rng);

  SUBCASE("all-known masks leave the flow unchanged") {
    Tensor m = Tensor::full({N, 1, H, W}, 1.0f);
    CorruptedFlow c = estimate_corrupted_flow(src, m);
    CHECK(bitwise_equal(c.flow.forward, src.forward));
    CHECK(bitwise_equal(c.flow.backward, src.backward));
    for (size_t i = 0; i < c.holes.numel(); ++i) CHECK(c.holes.data()[i] == 0.0f);
  }

  SUBCASE("all-hole masks zero everything") {
    Tensor m = Tensor::zeros({N, 1, H, W});
    CorruptedFlow c = estimate_corrupted_flow(src, m);
    for (size_t i = 0; i < c.flow.forward.numel(); ++i) {
      CHECK(c.flow.forward.data()[i] == 0.0f);
      CHECK(c.flow.backward.data()[i] == 0.0f);
    }
    for (size_t i = 0; i < c.holes.numel(); ++i) CHECK(c.holes.data()[i] == 1.0f);
  }

  SUBCASE("half-frame mask zeroes exactly the union support") {
    // frame 0 hides the left half, frame 1 the top half; frame 2 fully known
    Tensor m = Tensor::full({N, 1, H, W}, 1.0f);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W / 2; ++x) m.data()[(size_t)y * W + x] = 0.0f;
    for (int y = 0; y < H / 2; ++y)
      for (int x = 0; x < W; ++x) m.data()[(size_t)H * W + y * W + x] = 0.0f;
    CorruptedFlow c = estimate_corrupted_flow(src, m);
    const size_t hw = (size_t)H * W;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const bool hole0 = x < W / 2 || y < H / 2;  // pair 0: union of frames 0,1
        const bool hole1 = y < H / 2;               // pair 1: union of frames 1,2
        CHECK(c.holes.data()[(size_t)y * W + x] == (hole0 ? 1.0f : 0.0f));
        CHECK(c.holes.data()[hw + (size_t)y * W + x] == (hole1 ? 1.0f : 0.0f));
        if (hole0)
          CHECK(c.flow.forward.data()[(size_t)y * W + x] == 0.0f);
        else
          CHECK(c.flow.forward.data()[(size_t)y * W + x] ==
                src.forward.data()[(size_t)y * W + x]);
      }
  }

  SUBCASE("single frame is an error") {
    Tensor m = Tensor::full({1, 1, H, W}, 1.0f);
    CHECK_THROWS_WITH_AS(estimate_corrupted_flow(src, m), doctest::Contains("2 frames"),
                         std::runtime_error);
  }
}

TEST_CASE("backward_warp identities and oracles") {
  Rng rng(2);
  const int H = 8, W = 8;
  Tensor img = Tensor::randn({3, H, W}, rng);

  SUBCASE("zero flow is the identity with full validity") {
    Tensor zero(Shape{2, H, W});
    auto [out, valid] = backward_warp(img, zero);
    CHECK(bitwise_equal(out, img));
    for (size_t i = 0; i < valid.numel(); ++i) CHECK(valid.data()[i] == 1.0f);
  }

  SUBCASE("constant integer flow shifts exactly on the valid interior") {
    Tensor flow(Shape{2, H, W});
    for (size_t i = 0; i < (size_t)H * W; ++i) flow.data()[i] = 2.0f;  // dx=2, dy=0
    auto [out, valid] = backward_warp(img, flow);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const bool in = x + 2 <= W - 1;
        CHECK(valid.at({0, y, x}) == (in ? 1.0f : 0.0f));
        for (int c = 0; c < 3; ++c) {
          if (in)
            CHECK(out.at({c, y, x}) == img.at({c, y, x + 2}));
          else
            CHECK(out.at({c, y, x}) == img.at({c, y, x}));  // source fill
        }
      }
  }

  SUBCASE("half-pixel flow on a 1-d ramp takes neighbor means") {
    Tensor ramp({1, 1, W});
    for (int x = 0; x < W; ++x) ramp.data()[x] = (float)x * x;  // nonlinear ramp
    Tensor flow(Shape{2, 1, W});
    for (int x = 0; x < W; ++x) flow.data()[x] = 0.5f;
    auto [out, valid] = backward_warp(ramp, flow);
    for (int x = 0; x + 1 < W; ++x)
      CHECK(out.at({0, 0, x}) == doctest::Approx(0.5f * (ramp.data()[x] + ramp.data()[x + 1])));
    CHECK(valid.at({0, 0, W - 1}) == 0.0f);
  }
}

TEST_CASE("flow loss and the combined objective") {
  Rng rng(3);
  FlowPair gt;
  gt.forward = Tensor::randn({2, 2, 4, 4}, rng);
  gt.backward = Tensor::randn({2, 2, 4, 4}, rng);
  CompletedFlow pred;
  pred.flow.forward = gt.forward.clone();
  pred.flow.backward = gt.backward.clone();
  CHECK(flow_loss(pred, gt).item() == 0.0f);

  for (size_t i = 0; i < pred.flow.forward.numel(); ++i) {
    pred.flow.forward.data()[i] += 1.0f;
    pred.flow.backward.data()[i] += 1.0f;
  }
  CHECK(flow_loss(pred, gt).item() == doctest::Approx(1.0f));

  CompletedFlow rnd;
  rnd.flow.forward = Tensor::randn(gt.forward.shape(), rng);
  rnd.flow.backward = Tensor::randn(gt.backward.shape(), rng);
  double oracle = 0;
  for (size_t i = 0; i < gt.forward.numel(); ++i)
    oracle += std::fabs((double)rnd.flow.forward.data()[i] - gt.forward.data()[i]) +
              std::fabs((double)rnd.flow.backward.data()[i] - gt.backward.data()[i]);
  oracle /= (double)(2 * gt.forward.numel());
  CHECK(std::fabs(flow_loss(rnd, gt).item() - oracle) < 1e-6);

  CHECK(combined_loss(Tensor::scalar(1.0f), Tensor::scalar(2.0f), 0.1f).item() ==
        doctest::Approx(1.2f));
  CHECK(combined_loss(Tensor::scalar(3.0f), Tensor::scalar(2.0f), 0.0f).item() == 3.0f);
  CHECK(combined_loss(Tensor::scalar(3.0f), Tensor::scalar(0.0f), 0.5f).item() == 3.0f);
  CHECK_THROWS(combined_loss(Tensor::scalar(1.0f), Tensor::scalar(1.0f), -0.5f));
}

TEST_CASE("flo2 round trip") {
  Rng rng(4);
  FlowPair f = constant_flow(3, 6, 5, 1.5f, -2.0f);
  rng.fill_normal(f.forward.data(), f.forward.numel());
  write_flo2("/tmp/fv_test.flo2", f);
  FlowPair back = read_flo2("/tmp/fv_test.flo2");
  CHECK(bitwise_equal(back.forward, f.forward));
  CHECK(bitwise_equal(back.backward, f.backward));
  CHECK_THROWS(read_flo2("/tmp/fv_missing.flo2"));
}

TEST_CASE("flow completion branch: composite identity, purity, feature contract") {
  ModelConfig cfg;
  cfg.res = 16;
  cfg.base_width = 8;
  cfg.frames_max = 8;
  ParamStore ps;
  Rng rng(5);
  FlowNet net(ps, cfg, rng);

  const int N = 4, H = 16, W = 16;
  Rng drng(6);
  FlowPair src;
  src.forward = Tensor::randn({N - 1, 2, H, W}, drng);
  src.backward = Tensor::randn({N - 1, 2, H, W}, drng);

  SUBCASE("all-known masks: completed flow equals the input exactly") {
    Tensor m = Tensor::full({N, 1, H, W}, 1.0f);
    CorruptedFlow c = estimate_corrupted_flow(src, m);
    auto [done, feats] = net.complete(c);
    CHECK(bitwise_equal(done.flow.forward, src.forward));
    CHECK(bitwise_equal(done.flow.backward, src.backward));
    CHECK((int)feats.scales.size() == cfg.levels);
  }

  SUBCASE("known region stays exact under partial masks") {
    Rng mr(7);
    Tensor m = Tensor::full({N, 1, H, W}, 1.0f);
    for (size_t i = 0; i < m.numel(); ++i)
      if (mr.uniform() < 0.3f) m.data()[i] = 0.0f;
    CorruptedFlow c = estimate_corrupted_flow(src, m);
    auto [done, feats] = net.complete(c);
    const size_t hw = (size_t)H * W;
    for (int k = 0; k < N - 1; ++k)
      for (size_t i = 0; i < hw; ++i)
        if (c.holes.data()[k * hw + i] == 0.0f) {
          CHECK(done.flow.forward.data()[k * 2 * hw + i] ==
                c.flow.forward.data()[k * 2 * hw + i]);
          CHECK(done.flow.forward.data()[k * 2 * hw + hw + i] ==
                c.flow.forward.data()[k * 2 * hw + hw + i]);
        }
    // validity is a [0,1] weight
    for (size_t i = 0; i < done.validity.numel(); ++i) {
      CHECK(done.validity.data()[i] >= 0.0f);
      CHECK(done.validity.data()[i] <= 1.0f);
    }
  }

  SUBCASE("timestep independence: repeated calls are bit-identical") {
    Rng mr(8);
    Tensor m = Tensor::full({N, 1, H, W}, 1.0f);
    for (size_t i = 0; i < m.numel(); ++i)
      if (mr.uniform() < 0.4f) m.data()[i] = 0.0f;
    CorruptedFlow c = estimate_corrupted_flow(src, m);
    auto [a, fa] = net.complete(c);
    auto [b, fb] = net.complete(c);
    CHECK(bitwise_equal(a.flow.forward, b.flow.forward));
    CHECK(bitwise_equal(a.flow.backward, b.flow.backward));
    for (int s = 0; s < cfg.levels; ++s) CHECK(bitwise_equal(fa.scales[s], fb.scales[s]));
  }

  SUBCASE("feature channel counts match the up-block widths") {
    Tensor m = Tensor::full({N, 1, H, W}, 1.0f);
    auto [done, feats] = net.complete(estimate_corrupted_flow(src, m));
    REQUIRE((int)feats.scales.size() == 3);
    CHECK(feats.scales[0].shape() == Shape({N - 1, 32, 4, 4}));
    CHECK(feats.scales[1].shape() == Shape({N - 1, 16, 8, 8}));
    CHECK(feats.scales[2].shape() == Shape({N - 1, 8, 16, 16}));
  }
}
