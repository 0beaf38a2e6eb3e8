#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "core/ops.hpp"
#include "data/image_io.hpp"
#include "data/synth.hpp"
#include "test_util.hpp"

using namespace flowvid;
using flowvid::testutil::bitwise_equal;

namespace {

Tensor frame_of(const Tensor& clip, int f) {
  const int C = clip.dim(1), H = clip.dim(2), W = clip.dim(3);
  Tensor t({C, H, W});
  std::memcpy(t.data(), clip.data() + (size_t)f * C * H * W, t.numel() * sizeof(float));
  return t;
}

}  // namespace

TEST_CASE("zero-velocity primitive gives all-zero flow") {
  SceneSpec s;
  s.frames = 4;
  s.height = s.width = 16;
  Primitive p;
  p.x0 = p.y0 = 8;
  p.size = 4;
  s.prims = {p};
  ClipSample clip = generate_clip(s);
  for (size_t i = 0; i < clip.flow.forward.numel(); ++i) {
    CHECK(clip.flow.forward.data()[i] == 0.0f);
    CHECK(clip.flow.backward.data()[i] == 0.0f);
  }
}

TEST_CASE("moving square carries its velocity on its support") {
  SceneSpec s;
  s.frames = 3;
  s.height = s.width = 16;
  Primitive p;
  p.kind = Primitive::Kind::kSquare;
  p.x0 = 5;
  p.y0 = 8;
  p.size = 4;
  p.vx = 2;
  s.prims = {p};
  ClipSample clip = generate_clip(s);
  // support at frame 0: centered (5,8), side 4 -> cells fully inside
  int on_support = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const float fx = clip.flow.forward.at({0, 0, y, x});
      const float fy = clip.flow.forward.at({0, 1, y, x});
      const bool inside = std::fabs(x - 5.0f) <= 2.0f && std::fabs(y - 8.0f) <= 2.0f;
      if (inside) {
        CHECK(fx == 2.0f);
        CHECK(fy == 0.0f);
        ++on_support;
      }
      if (!inside && std::fabs(x - 5.0f) > 2.5f) CHECK(fx == 0.0f);
    }
  CHECK(on_support > 0);
}

TEST_CASE("warping frame i+1 with forward flow reproduces frame i outside disocclusion") {
  Rng rng(3);
  for (int cls = 0; cls < 8; ++cls) {
    SceneSpec spec = make_scene(cls, 6, 24, 24, rng);
    ClipSample clip = generate_clip(spec);
    for (int k = 0; k + 1 < spec.frames; ++k) {
      Tensor fwd = ops::slice(clip.flow.forward, 0, k, 1).reshaped({2, 24, 24});
      auto [warped, valid] = backward_warp(frame_of(clip.frames, k + 1), fwd);
      Tensor occ = occlusion_mask(spec, k);
      Tensor here = frame_of(clip.frames, k);
      for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) {
          if (valid.at({0, y, x}) < 0.5f || occ.at({y, x}) > 0.5f) continue;
          for (int c = 0; c < 3; ++c) {
            CAPTURE(cls);
            CAPTURE(k);
            CAPTURE(x);
            CAPTURE(y);
            CHECK(warped.at({c, y, x}) == here.at({c, y, x}));
          }
        }
    }
  }
}

TEST_CASE("rigid whole-scene pan has exactly opposite directions") {
  Rng rng(4);
  SceneSpec spec = make_scene(3, 5, 24, 24, rng);  // motion pattern 3 = rigid pan
  ClipSample clip = generate_clip(spec);
  for (size_t i = 0; i < clip.flow.forward.numel(); ++i)
    CHECK(clip.flow.forward.data()[i] == -clip.flow.backward.data()[i]);
}

TEST_CASE("masks: object coverage, background exclusion, binary values") {
  Rng rng(5);
  SceneSpec spec = make_scene(1, 4, 32, 32, rng);
  ClipSample clip = generate_clip(spec);

  MaskSpec obj;
  obj.kind = MaskSpec::Kind::kObject;
  Tensor om = generate_mask(obj, spec, rng);
  MaskSpec br;
  br.kind = MaskSpec::Kind::kBackgroundRandom;
  Tensor bm = generate_mask(br, spec, rng);

  const size_t hw = 32 * 32;
  bool br_has_hole = false;
  for (int f = 0; f < 4; ++f) {
    float cx, cy;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        // recompute the primitive support
        const Primitive& p = spec.prims[0];
        cx = p.x0 + f * (p.vx + spec.global_vx);
        cy = p.y0 + f * (p.vy + spec.global_vy);
        bool inside = false;
        if (p.kind == Primitive::Kind::kCircle)
          inside = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= p.size * p.size;
        else
          inside = std::fabs(x - cx) <= p.size / 2 && std::fabs(y - cy) <= p.size / 2;
        const float ov = om.data()[(size_t)f * hw + (size_t)y * 32 + x];
        const float bv = bm.data()[(size_t)f * hw + (size_t)y * 32 + x];
        CHECK((ov == 0.0f || ov == 1.0f));
        CHECK((bv == 0.0f || bv == 1.0f));
        if (inside) {
          CHECK(ov == 0.0f);  // object mask hole covers the support
          CHECK(bv == 1.0f);  // background strokes avoid it
        }
        if (bv == 0.0f) br_has_hole = true;
      }
  }
  CHECK(br_has_hole);
}

TEST_CASE("generation is bit-reproducible from the seed") {
  Rng a(42), b(42);
  SceneSpec sa = make_scene(2, 4, 16, 16, a);
  SceneSpec sb = make_scene(2, 4, 16, 16, b);
  ClipSample ca = generate_clip(sa);
  ClipSample cb = generate_clip(sb);
  CHECK(bitwise_equal(ca.frames, cb.frames));
  CHECK(bitwise_equal(ca.flow.forward, cb.flow.forward));
  Tensor ma = generate_mask(MaskSpec{}, sa, a);
  Tensor mb = generate_mask(MaskSpec{}, sb, b);
  CHECK(bitwise_equal(ma, mb));
}

TEST_CASE("out-of-frame trajectory is an error") {
  SceneSpec s;
  s.frames = 8;
  s.height = s.width = 16;
  Primitive p;
  p.x0 = 12;
  p.y0 = 8;
  p.size = 3;
  p.vx = 2;  // walks off the right edge
  s.prims = {p};
  CHECK_THROWS_WITH_AS(generate_clip(s), doctest::Contains("leaves the frame"),
                       std::runtime_error);
}

TEST_CASE("fractional squares stay warp-consistent on a solid background") {
  SceneSpec s;
  s.frames = 3;
  s.height = s.width = 16;
  s.bg.kind = Background::Kind::kSolid;
  Primitive p;
  p.kind = Primitive::Kind::kSquare;
  p.x0 = 6;
  p.y0 = 8;
  p.size = 4;
  p.vx = 0.5f;
  s.prims = {p};
  ClipSample clip = generate_clip(s);
  Tensor fwd = ops::slice(clip.flow.forward, 0, 0, 1).reshaped({2, 16, 16});
  auto [warped, valid] = backward_warp(frame_of(clip.frames, 1), fwd);
  Tensor here = frame_of(clip.frames, 0);
  // interior band around the square: bilinear warp matches coverage rendering
  for (int y = 7; y <= 9; ++y)
    for (int x = 3; x <= 10; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(warped.at({c, y, x}) == doctest::Approx(here.at({c, y, x})).epsilon(1e-5));
}

TEST_CASE("sample save/load round trip with ppm dump") {
  Rng rng(6);
  SceneSpec spec = make_scene(0, 3, 16, 16, rng);
  ClipSample clip = generate_clip(spec);
  clip.mask = generate_mask(MaskSpec{}, spec, rng);
  const std::string dir = "/tmp/fv_sample_rt";
  std::filesystem::remove_all(dir);
  save_sample(dir, clip, true);
  ClipSample back = load_sample(dir);
  CHECK(bitwise_equal(back.frames, clip.frames));
  CHECK(bitwise_equal(back.mask, clip.mask));
  CHECK(bitwise_equal(back.flow.forward, clip.flow.forward));
  CHECK(back.class_id == clip.class_id);
  CHECK(back.spec.prims.size() == spec.prims.size());
  CHECK(std::filesystem::exists(dir + "/frame_00.ppm"));
  Tensor img = read_ppm(dir + "/frame_00.ppm");
  CHECK(img.shape() == Shape({3, 16, 16}));
  // quantized to 8 bits on write
  for (int c = 0; c < 3; ++c)
    CHECK(img.at({c, 4, 4}) == doctest::Approx(clip.frames.at({0, c, 4, 4})).epsilon(0.01));
}
