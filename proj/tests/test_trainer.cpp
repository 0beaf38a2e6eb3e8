#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "data/synth.hpp"
#include "model/checkpoint.hpp"
#include "train/trainer.hpp"
#include "test_util.hpp"

using namespace flowvid;
using flowvid::testutil::bitwise_equal;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.res = 16;
  c.frames_max = 8;
  c.base_width = 8;
  c.cond_dim = 8;
  c.cond_tokens = 2;
  c.num_classes = 8;
  c.time_dim = 8;
  c.time_hidden = 16;
  return c;
}

std::vector<ClipSample> tiny_dataset(int count, int frames = 4, int res = 16,
                                     uint64_t seed = 100) {
  std::vector<ClipSample> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(seed + i);
    SceneSpec spec = make_scene(i % 8, frames, res, res, rng);
    ClipSample c = generate_clip(spec);
    MaskSpec ms;
    c.mask = generate_mask(ms, spec, rng);
    out.push_back(std::move(c));
  }
  return out;
}

TrainConfig base_tc(int stage, const std::string& out) {
  TrainConfig tc;
  tc.stage = stage;
  tc.epochs = 1;
  tc.lr = 1e-3f;
  tc.batch_accum = 2;
  tc.micro_batch = 1;
  tc.seed = 7;
  tc.out_dir = out;
  return tc;
}

}  // namespace

TEST_CASE("stage-1 reports carry only the denoising term") {
  NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4f, 0.02f);
  Model model(tiny_config(), 3);
  auto data = tiny_dataset(2);
  Trainer tr(model, s, base_tc(1, "/tmp/fv_tr1"));
  LossReport r = tr.train_step({&data[0]}, {&data[0].mask});
  CHECK(!r.has_flow);
  CHECK(r.flow == 0.0);
  CHECK(r.total == doctest::Approx(r.diff));
  CHECK(std::isfinite(r.total));
}

TEST_CASE("stage-2 total equals diff + lambda*flow to 1e-7") {
  NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4f, 0.02f);
  Model model(tiny_config(), 3);
  auto data = tiny_dataset(2);
  TrainConfig tc = base_tc(2, "/tmp/fv_tr2");
  tc.lambda = 0.1f;
  Trainer tr(model, s, tc);
  LossReport r = tr.train_step({&data[0]}, {&data[0].mask});
  CHECK(r.has_flow);
  CHECK(std::fabs(r.total - (r.diff + 0.1 * r.flow)) < 1e-7);
}

TEST_CASE("gradient accumulation: one optimizer step per accumulated batch") {
  NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4f, 0.02f);
  Model model(tiny_config(), 3);
  auto data = tiny_dataset(8);
  TrainConfig tc = base_tc(1, "/tmp/fv_tr3");
  tc.batch_accum = 4;
  tc.micro_batch = 2;
  Trainer tr(model, s, tc);
  // 8 clips = 4 micro-batches of 2 = one optimizer step
  for (int i = 0; i < 4; ++i) {
    std::vector<const ClipSample*> b = {&data[2 * i], &data[2 * i + 1]};
    std::vector<const Tensor*> m = {&data[2 * i].mask, &data[2 * i + 1].mask};
    tr.train_step(b, m);
  }
  CHECK(tr.optimizer().step_count() == 1);
}

TEST_CASE("non-finite loss aborts with a diagnostic dump") {
  NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4f, 0.02f);
  Model model(tiny_config(), 3);
  auto data = tiny_dataset(1);
  std::filesystem::create_directories("/tmp/fv_tr4");
  TrainConfig tc = base_tc(1, "/tmp/fv_tr4");
  Trainer tr(model, s, tc);
  // poison a motion weight
  for (auto& e : model.params().entries())
    if (e.group == ParamGroup::kMotion && e.name.find(".wv") != std::string::npos) {
      e.t.data()[0] = std::numeric_limits<float>::quiet_NaN();
      break;
    }
  CHECK_THROWS_WITH_AS(tr.train_step({&data[0]}, {&data[0].mask}),
                       doctest::Contains("non-finite"), std::runtime_error);
  CHECK(std::filesystem::exists("/tmp/fv_tr4/train_diagnostic.txt"));
}

TEST_CASE("same seed and data order reproduce the loss curve bitwise") {
  NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4f, 0.02f);
  auto data = tiny_dataset(4);
  auto run = [&]() {
    Model model(tiny_config(), 3);
    TrainConfig tc = base_tc(2, "/tmp/fv_tr5");
    tc.max_steps = 6;
    tc.epochs = 2;
    Trainer tr(model, s, tc);
    tr.run(data);
    std::vector<double> losses;
    for (const auto& r : tr.history()) losses.push_back(r.total);
    return losses;
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("stage-2 training leaves spatial and condition groups bit-identical") {
  NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4f, 0.02f);
  Model model(tiny_config(), 3);
  auto data = tiny_dataset(4);
  std::vector<Tensor> before;
  for (const auto& e : model.params().entries())
    if (e.group == ParamGroup::kSpatial || e.group == ParamGroup::kCondition)
      before.push_back(e.t.clone());
  TrainConfig tc = base_tc(2, "/tmp/fv_tr6");
  tc.max_steps = 4;
  Trainer tr(model, s, tc);
  tr.run(data);
  size_t i = 0;
  bool motion_moved = false;
  for (const auto& e : model.params().entries()) {
    if (e.group == ParamGroup::kSpatial || e.group == ParamGroup::kCondition) {
      CAPTURE(e.name);
      CHECK(bitwise_equal(e.t, before[i++]));
    }
  }
  (void)motion_moved;
}

TEST_CASE("resume reproduces the next step's loss exactly") {
  NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4f, 0.02f);
  auto data = tiny_dataset(6);
  const std::string dir = "/tmp/fv_resume";
  std::filesystem::remove_all(dir);

  // reference: straight run of 5 steps
  std::vector<double> ref;
  {
    Model model(tiny_config(), 3);
    TrainConfig tc = base_tc(2, dir + "/full");
    tc.max_steps = 5;
    Trainer tr(model, s, tc);
    tr.run(data);
    for (const auto& r : tr.history()) ref.push_back(r.total);
  }
  REQUIRE(ref.size() == 5);

  // first leg: 3 steps, checkpointed
  {
    Model model(tiny_config(), 3);
    TrainConfig tc = base_tc(2, dir + "/leg1");
    tc.max_steps = 3;
    Trainer tr(model, s, tc);
    tr.run(data);
  }
  // second leg: resume and do 2 more
  {
    Model model(tiny_config(), 3);
    TrainConfig tc = base_tc(2, dir + "/leg2");
    tc.max_steps = 5;
    tc.resume_from = dir + "/leg1/final";
    Trainer tr(model, s, tc);
    tr.run(data);
    REQUIRE(tr.history().size() == 2);
    CHECK(std::fabs(tr.history()[0].total - ref[3]) < 1e-6);
    CHECK(std::fabs(tr.history()[1].total - ref[4]) < 1e-6);
  }
}
