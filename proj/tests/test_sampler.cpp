#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "core/ops.hpp"
#include "data/synth.hpp"
#include "sampler/sampler.hpp"
#include "test_util.hpp"

using namespace flowvid;
using flowvid::testutil::bitwise_equal;
using flowvid::testutil::max_abs_diff;

namespace {

// Knows the clean rows and answers with the exactly implied noise.
struct OraclePredictor final : NoisePredictor {
  NoiseSchedule* sched = nullptr;
  Tensor clean_clip;  // (N,C,H,W)
  Tensor anchor;      // (C,H,W) when runs are anchored

  Tensor predict(const DenoiserBatch& b, const MultiScaleFlowFeatures*,
                 const MemoryBank*) override {
    const int F = b.z_t.dim(0);
    Tensor z0(b.z_t.shape());
    const size_t block = z0.numel() / (size_t)F;
    for (int f = 0; f < F; ++f) {
      const int ci = b.clip_indices[f];
      const float* src = ci < 0 ? anchor.data() : clean_clip.data() + (size_t)ci * block;
      std::memcpy(z0.data() + (size_t)f * block, src, block * sizeof(float));
    }
    return invert_to_eps(*sched, b.z_t, z0, b.t);
  }
};

// Hands back the ground-truth flow unchanged; no features (no adapters).
struct OracleCompleter final : FlowCompleter {
  FlowPair gt;
  std::pair<CompletedFlow, MultiScaleFlowFeatures> complete(const CorruptedFlow& c) override {
    CompletedFlow out;
    out.flow.forward = gt.forward.clone();
    out.flow.backward = gt.backward.clone();
    out.validity = Tensor::full({gt.forward.dim(0), 1, gt.forward.dim(2), gt.forward.dim(3)},
                                1.0f);
    return {out, {}};
  }
};

SampleInputs inputs_from(const ClipSample& clip, bool with_anchor) {
  SampleInputs in;
  in.v_m = clip.frames;
  in.mask = clip.mask;
  in.flow_source = clip.flow;
  in.cond = Cond{clip.class_id, false};
  if (with_anchor) {
    in.anchor = Tensor(Shape{clip.frames.dim(1), clip.frames.dim(2), clip.frames.dim(3)});
    std::memcpy(in.anchor.data(), clip.frames.data(), in.anchor.numel() * sizeof(float));
  }
  return in;
}

ClipSample masked_clip(int cls, int frames, int res, uint64_t seed,
                       MaskSpec::Kind kind = MaskSpec::Kind::kBackgroundRandom) {
  Rng rng(seed);
  SceneSpec spec = make_scene(cls, frames, res, res, rng);
  ClipSample clip = generate_clip(spec);
  MaskSpec ms;
  ms.kind = kind;
  clip.mask = generate_mask(ms, spec, rng);
  return clip;
}

}  // namespace

TEST_CASE("config invariants") {
  SamplerConfig c;
  c.steps = 25;
  c.speedup_steps = 25;
  CHECK_THROWS(c.validate());
  c.speedup_steps = 24;
  CHECK_NOTHROW(c.validate());
  c.speedup_steps = -1;
  CHECK_THROWS(c.validate());
}

TEST_CASE("parity plan splits and alternates") {
  ParityPlan p = ParityPlan::make(5);
  CHECK(p.even_indices == std::vector<int>{0, 2, 4});
  CHECK(p.odd_indices == std::vector<int>{1, 3});
  CHECK(p.active_set() == p.even_indices);
  p.alternate();
  CHECK(p.active_set() == p.odd_indices);
}

TEST_CASE("copy_paste trivial masks") {
  NoiseSchedule s = NoiseSchedule::linear(100, 1e-4f, 0.02f);
  Rng rng(1);
  Tensor z_next = Tensor::randn({2, 3, 4, 4}, rng);
  Tensor z0 = Tensor::randn({2, 3, 4, 4}, rng);
  Tensor eps = Tensor::randn({2, 3, 4, 4}, rng);

  Tensor ones = Tensor::full({2, 1, 4, 4}, 1.0f);
  CHECK(bitwise_equal(copy_paste(s, z_next, z0, ones, 50, eps), add_noise(s, z0, eps, 50)));

  Tensor zeros = Tensor::zeros({2, 1, 4, 4});
  CHECK(bitwise_equal(copy_paste(s, z_next, z0, zeros, 50, eps), z_next));

  // clean boundary keeps the known bits untouched
  CHECK(bitwise_equal(copy_paste(s, z_next, z0, ones, -1, eps), z0));
}

TEST_CASE("prepend_anchor contracts") {
  Rng rng(2);
  Tensor v = Tensor::randn({4, 3, 8, 8}, rng);
  Tensor m = Tensor::full({4, 1, 8, 8}, 1.0f);
  Tensor anchor = Tensor::randn({3, 8, 8}, rng);

  AnchoredInputs plain = prepend_anchor(v, m, Tensor(), false);
  CHECK(plain.z0_known.storage_id() == v.storage_id());
  CHECK(plain.clip_indices == std::vector<int>{0, 1, 2, 3});

  AnchoredInputs a = prepend_anchor(v, m, anchor, true);
  CHECK(a.z0_known.shape() == Shape({5, 3, 8, 8}));
  CHECK(a.clip_indices == std::vector<int>{-1, 0, 1, 2, 3});
  for (size_t i = 0; i < anchor.numel(); ++i) CHECK(a.z0_known.data()[i] == anchor.data()[i]);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) CHECK(a.mask.at({0, 0, y, x}) == 1.0f);

  Tensor bad = Tensor::randn({3, 4, 4}, rng);
  CHECK_THROWS_WITH_AS(prepend_anchor(v, m, bad, true), doctest::Contains("anchor"),
                       std::runtime_error);
}

TEST_CASE("oracle-driven pipeline: counts match the closed form") {
  NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4f, 0.02f);
  ClipSample clip = masked_clip(1, 16, 32, 3);
  OraclePredictor pred;
  pred.sched = &s;
  pred.clean_clip = clip.frames;
  pred.anchor = Tensor(Shape{3, 32, 32});
  std::memcpy(pred.anchor.data(), clip.frames.data(), pred.anchor.numel() * sizeof(float));
  OracleCompleter comp;
  comp.gt = clip.flow;
  Sampler sampler(pred, &comp, s);

  SamplerConfig cfg;
  cfg.steps = 25;
  cfg.speedup_steps = 5;
  cfg.guidance_scale = 1.0f;
  cfg.use_anchor = false;
  cfg.use_interpolation = true;
  cfg.use_cache = false;
  cfg.adapters_enabled = false;

  SUBCASE("paper setting: 16 frames, 25 steps, S=5 gives 360 vs 400") {
    sampler.sample(cfg, inputs_from(clip, false));
    CHECK(sampler.stats().denoiser_frame_forwards == 16 * 25 - 5 * 8);
    CHECK(sampler.stats().denoiser_frame_forwards == 360);
    SamplerConfig base = cfg;
    base.use_interpolation = false;
    sampler.sample(base, inputs_from(clip, false));
    CHECK(sampler.stats().denoiser_frame_forwards == 400);
  }

  SUBCASE("anchored runs: N'=17, saving ceil(17/2) per interpolation step") {
    cfg.use_anchor = true;
    sampler.sample(cfg, inputs_from(clip, true));
    CHECK(sampler.stats().denoiser_frame_forwards == 17 * 25 - 5 * 9);
  }

  SUBCASE("guidance doubles every count") {
    cfg.guidance_scale = 15.0f;
    sampler.sample(cfg, inputs_from(clip, false));
    CHECK(sampler.stats().denoiser_frame_forwards == 2 * (16 * 25 - 5 * 8));
  }
}

TEST_CASE("oracle denoiser with exact flow: interpolation stays faithful") {
  NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4f, 0.02f);
  // rigid whole-scene pan: the warp identity holds everywhere valid
  ClipSample clip = masked_clip(7, 8, 16, 5);
  OraclePredictor pred;
  pred.sched = &s;
  pred.clean_clip = clip.frames;
  pred.anchor = Tensor(Shape{3, 16, 16});
  std::memcpy(pred.anchor.data(), clip.frames.data(), pred.anchor.numel() * sizeof(float));
  OracleCompleter comp;
  comp.gt = clip.flow;
  Sampler sampler(pred, &comp, s);

  SamplerConfig base;
  base.steps = 25;
  base.speedup_steps = 0;
  base.guidance_scale = 1.0f;
  base.use_anchor = false;
  base.use_interpolation = false;
  base.use_cache = false;
  base.adapters_enabled = false;
  base.seed = 11;
  Tensor direct = sampler.sample(base, inputs_from(clip, false));

  SamplerConfig li = base;
  li.use_interpolation = true;
  li.speedup_steps = 5;
  Tensor interp = sampler.sample(li, inputs_from(clip, false));

  // both reconstruct the clip: warped clean estimates equal denoised ones
  CHECK(max_abs_diff(direct, clip.frames) < 1e-3);
  CHECK(max_abs_diff(interp, direct) < 1e-3);
}

TEST_CASE("static scene with zero flow: warped estimates are exact copies") {
  NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4f, 0.02f);
  SceneSpec spec;
  spec.frames = 6;
  spec.height = spec.width = 16;
  Primitive p;
  p.x0 = p.y0 = 8;
  p.size = 3;
  spec.prims = {p};
  ClipSample clip = generate_clip(spec);
  Rng mr(7);
  MaskSpec ms;
  clip.mask = generate_mask(ms, spec, mr);

  OraclePredictor pred;
  pred.sched = &s;
  pred.clean_clip = clip.frames;
  OracleCompleter comp;
  comp.gt = clip.flow;
  Sampler sampler(pred, &comp, s);

  SamplerConfig cfg;
  cfg.steps = 25;
  cfg.speedup_steps = 8;
  cfg.guidance_scale = 1.0f;
  cfg.use_anchor = false;
  cfg.use_interpolation = true;
  cfg.use_cache = false;
  cfg.adapters_enabled = false;
  Tensor out = sampler.sample(cfg, inputs_from(clip, false));
  CHECK(max_abs_diff(out, clip.frames) < 1e-3);
}

TEST_CASE("interpolation rejects single-frame clips") {
  NoiseSchedule s = NoiseSchedule::linear(100, 1e-4f, 0.02f);
  SceneSpec spec;
  spec.frames = 1;
  spec.height = spec.width = 16;
  ClipSample clip = generate_clip(spec);
  clip.mask = Tensor::full({1, 1, 16, 16}, 1.0f);
  OraclePredictor pred;
  pred.sched = &s;
  pred.clean_clip = clip.frames;
  Sampler sampler(pred, nullptr, s);
  SamplerConfig cfg;
  cfg.steps = 4;
  cfg.speedup_steps = 2;
  cfg.use_anchor = false;
  cfg.guidance_scale = 1.0f;
  cfg.adapters_enabled = false;
  CHECK_THROWS_WITH_AS(sampler.sample(cfg, inputs_from(clip, false)),
                       doctest::Contains("2 frames"), std::runtime_error);
}

TEST_CASE("feature-off equivalence: plain ddim loop vs sampler with everything off") {
  NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4f, 0.02f);
  ClipSample clip = masked_clip(2, 4, 16, 9);
  ModelConfig mc;
  mc.res = 16;
  mc.frames_max = 8;
  mc.base_width = 8;
  mc.cond_dim = 8;
  mc.cond_tokens = 2;
  mc.num_classes = 8;
  mc.time_dim = 8;
  mc.time_hidden = 16;
  Model model(mc, 33);
  ModelPredictor pred(model.denoiser());
  ModelFlowCompleter comp(model.flow_net());
  Sampler sampler(pred, &comp, s);

  SamplerConfig cfg;
  cfg.steps = 8;
  cfg.speedup_steps = 0;
  cfg.guidance_scale = 1.0f;
  cfg.use_anchor = false;
  cfg.use_interpolation = false;
  cfg.use_cache = false;
  cfg.adapters_enabled = false;
  cfg.seed = 21;
  Tensor got = sampler.sample(cfg, inputs_from(clip, false));

  // independent reference: plain masked ddim loop with per-step copy-paste
  {
    NoGradGuard ng;
    model.denoiser().set_adapters_enabled(false);
    Tensor v_m = ops::select_by_mask(clip.mask, clip.frames, Tensor::zeros(clip.frames.shape()));
    Rng rng(21);
    Tensor eps_fixed = Tensor::randn({4, 3, 16, 16}, rng);
    std::vector<int> ts = s.inference_timesteps(8);
    Tensor z = add_noise(s, v_m, eps_fixed, ts[0]);
    for (size_t j = 0; j < ts.size(); ++j) {
      const int t = ts[j];
      const int t_prev = j + 1 < ts.size() ? ts[j + 1] : -1;
      DenoiserBatch b;
      b.z_t = z;
      b.mask = clip.mask;
      b.z_masked = v_m;
      b.t = t;
      b.cond = Cond{clip.class_id, false};
      b.clip_indices = {0, 1, 2, 3};
      b.anchored = false;
      Tensor eps = model.denoiser().forward(b, nullptr, nullptr);
      z = copy_paste(s, ddim_step(s, z, eps, t, t_prev), v_m, clip.mask, t_prev, eps_fixed);
    }
    CHECK(bitwise_equal(got, z));
  }
}

TEST_CASE("cache soundness at pipeline level and determinism") {
  NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4f, 0.02f);
  ClipSample clip = masked_clip(5, 6, 16, 13, MaskSpec::Kind::kObject);
  ModelConfig mc;
  mc.res = 16;
  mc.frames_max = 8;
  mc.base_width = 8;
  mc.cond_dim = 8;
  mc.cond_tokens = 2;
  mc.num_classes = 8;
  mc.time_dim = 8;
  mc.time_hidden = 16;
  Model model(mc, 55);
  // non-trivial adapters so the cache actually matters
  Rng gr(56);
  for (int i = 0; i < 3; ++i) model.denoiser().up_adapter(i).gamma.data()[0] = 0.5f + 0.1f * i;
  ModelPredictor pred(model.denoiser());
  ModelFlowCompleter comp(model.flow_net());
  Sampler sampler(pred, &comp, s);

  SamplerConfig cached;
  cached.steps = 25;
  cached.speedup_steps = 0;
  cached.guidance_scale = 1.0f;
  cached.use_anchor = true;
  cached.use_interpolation = false;
  cached.use_cache = true;
  cached.adapters_enabled = true;
  cached.seed = 77;
  Tensor with_cache = sampler.sample(cached, inputs_from(clip, true));
  const RunStats cache_stats = sampler.stats();

  SamplerConfig recompute = cached;
  recompute.use_cache = false;
  Tensor without = sampler.sample(recompute, inputs_from(clip, true));
  const RunStats rec_stats = sampler.stats();

  CHECK(max_abs_diff(with_cache, without) <= 1e-5);
  CHECK(cache_stats.flow_branch_calls == 1);
  CHECK(rec_stats.flow_branch_calls == 1);
  for (int sc = 0; sc < 3; ++sc) {
    CHECK(cache_stats.kv_projection_calls[sc] == 1);
    CHECK(rec_stats.kv_projection_calls[sc] == 25);
  }

  // bit-identical reruns under the same seed
  Tensor again = sampler.sample(cached, inputs_from(clip, true));
  CHECK(bitwise_equal(with_cache, again));
}

TEST_CASE("known region of the decoded output is bit-exact") {
  NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4f, 0.02f);
  ClipSample clip = masked_clip(4, 5, 16, 17);
  ModelConfig mc;
  mc.res = 16;
  mc.frames_max = 8;
  mc.base_width = 8;
  mc.cond_dim = 8;
  mc.cond_tokens = 2;
  mc.num_classes = 8;
  mc.time_dim = 8;
  mc.time_hidden = 16;
  Model model(mc, 71);
  ModelPredictor pred(model.denoiser());
  ModelFlowCompleter comp(model.flow_net());
  Sampler sampler(pred, &comp, s);

  SamplerConfig cfg;
  cfg.steps = 10;
  cfg.speedup_steps = 3;
  cfg.guidance_scale = 1.0f;
  cfg.use_anchor = true;
  cfg.seed = 5;
  Tensor out = sampler.sample(cfg, inputs_from(clip, true));
  REQUIRE(out.shape() == clip.frames.shape());
  const size_t hw = 16 * 16;
  for (int f = 0; f < 5; ++f)
    for (int c = 0; c < 3; ++c)
      for (size_t p = 0; p < hw; ++p)
        if (clip.mask.data()[f * hw + p] > 0.5f)
          CHECK(out.data()[(f * 3 + c) * hw + p] == clip.frames.data()[(f * 3 + c) * hw + p]);
}
