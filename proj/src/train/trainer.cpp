#include "train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "core/check.hpp"
#include "core/ops.hpp"
#include "core/tape.hpp"
#include "model/checkpoint.hpp"
#include "sampler/sampler.hpp"

namespace flowvid {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  FV_CHECK(stage == 1 || stage == 2, "train: stage must be 1 or 2, got " << stage);
  FV_CHECK(epochs >= 1 && batch_accum >= 1 && micro_batch >= 1, "train: bad loop sizes");
  FV_CHECK(lr > 0.0f, "train: non-positive learning rate");
  FV_CHECK(lambda >= 0.0f, "train: negative lambda");
  FV_CHECK(cond_dropout >= 0.0f && cond_dropout <= 1.0f, "train: bad cond_dropout");
}

Trainer::Trainer(Model& model, const NoiseSchedule& schedule, const TrainConfig& cfg)
    : model_(model), schedule_(schedule), cfg_(cfg), rng_(cfg.seed) {
  cfg.validate();
  model_.set_stage(cfg.stage);
  if (cfg.stage == 2 && !cfg.adapters_enabled) {
    // ablation: no flow guidance, so neither the adapters nor the flow
    // branch receive useful gradients; train the motion layers only
    model_.params().set_trainable(ParamGroup::kAdapter, false);
    model_.params().set_trainable(ParamGroup::kFlowBranch, false);
  }
  // flow features exist only in stage 2 with adapters on
  model_.denoiser().set_adapters_enabled(cfg.stage == 2 && cfg.adapters_enabled);
  adam_ = std::make_unique<Adam>(model_.params(), cfg.lr);
}

LossReport Trainer::micro_step(const ClipSample& clip, const Tensor& mask) {
  const int N = clip.frames.dim(0);
  FV_CHECK(mask.shape() == Shape({N, 1, clip.frames.dim(2), clip.frames.dim(3)}),
           "train: mask " << shape_str(mask.shape()) << " vs clip "
                          << shape_str(clip.frames.shape()));

  Tensor v_m = ops::select_by_mask(mask, clip.frames, Tensor::zeros(clip.frames.shape()));
  Tensor anchor;
  if (cfg_.use_anchor) {
    anchor = Tensor(Shape{clip.frames.dim(1), clip.frames.dim(2), clip.frames.dim(3)});
    std::memcpy(anchor.data(), clip.frames.data(), anchor.numel() * sizeof(float));
  }
  AnchoredInputs rows = prepend_anchor(v_m, mask, anchor, cfg_.use_anchor);

  // clean targets for every row, anchor included
  Tensor z0_clean = rows.z0_known.clone();
  if (rows.anchored)
    std::memcpy(z0_clean.data() + anchor.numel(), clip.frames.data(),
                clip.frames.numel() * sizeof(float));
  else
    std::memcpy(z0_clean.data(), clip.frames.data(), clip.frames.numel() * sizeof(float));

  const int t = rng_.uniform_int(0, schedule_.T - 1);
  Tensor eps = Tensor::randn(z0_clean.shape(), rng_);
  const bool drop_cond = rng_.uniform() < cfg_.cond_dropout;

  DenoiserBatch batch;
  batch.z_t = add_noise(schedule_, z0_clean, eps, t);
  batch.mask = rows.mask;
  batch.z_masked = rows.z0_known;
  batch.t = t;
  batch.cond = Cond{clip.class_id, drop_cond};
  batch.clip_indices = rows.clip_indices;
  batch.anchored = rows.anchored;

  LossReport rep;
  Tensor total;
  if (cfg_.stage == 2 && cfg_.adapters_enabled) {
    FV_CHECK(clip.flow.forward.defined(), "train: stage 2 needs ground-truth flow");
    CorruptedFlow corrupted = estimate_corrupted_flow(clip.flow, mask);
    auto [completed, feats] = model_.flow_net().complete(corrupted);
    Tensor eps_pred = model_.denoiser().forward(batch, &feats, nullptr);
    Tensor l_diff = diffusion_loss(eps_pred, eps);
    Tensor l_flow = flow_loss(completed, clip.flow);
    total = combined_loss(l_diff, l_flow, cfg_.lambda);
    rep.diff = l_diff.item();
    rep.flow = l_flow.item();
    rep.has_flow = true;
  } else {
    Tensor eps_pred = model_.denoiser().forward(batch, nullptr, nullptr);
    Tensor l_diff = diffusion_loss(eps_pred, eps);
    total = l_diff;
    rep.diff = l_diff.item();
  }
  rep.total = total.item();

  if (!std::isfinite(rep.total)) {
    const std::string dump = cfg_.out_dir.empty() ? "train_diagnostic.txt"
                                                  : cfg_.out_dir + "/train_diagnostic.txt";
    std::ofstream d(dump);
    d << "non-finite loss\nstep " << micro_steps_ << "\nt " << t << "\ndiff " << rep.diff
      << "\nflow " << rep.flow << "\nclass " << clip.class_id << "\n";
    Tape::instance().clear();
    FV_CHECK(false, "non-finite training loss at micro step " << micro_steps_
                                                              << "; diagnostics in " << dump);
  }

  // gradient accumulation: scale so batch_accum micro batches average out
  Tensor scaled = ops::scale(total, 1.0f / (float)(cfg_.batch_accum * cfg_.micro_batch));
  Tape::instance().backward(scaled);
  Tape::instance().clear();
  return rep;
}

LossReport Trainer::train_step(const std::vector<const ClipSample*>& batch,
                               const std::vector<const Tensor*>& masks) {
  FV_CHECK(!batch.empty() && batch.size() == masks.size(), "train_step: empty or uneven batch");
  LossReport mean;
  for (size_t i = 0; i < batch.size(); ++i) {
    LossReport r = micro_step(*batch[i], *masks[i]);
    mean.diff += r.diff;
    mean.flow += r.flow;
    mean.total += r.total;
    mean.has_flow = mean.has_flow || r.has_flow;
  }
  mean.diff /= (double)batch.size();
  mean.flow /= (double)batch.size();
  mean.total /= (double)batch.size();
  ++micro_steps_;
  if (micro_steps_ % cfg_.batch_accum == 0) {
    adam_->step();
    model_.params().zero_grads();
  }
  history_.push_back(mean);
  return mean;
}

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t x = seed ^ (salt * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull);
  x ^= x >> 29;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 32;
  return x;
}

}  // namespace

void Trainer::run(const std::vector<ClipSample>& dataset) {
  FV_CHECK(!dataset.empty(), "train: dataset is empty");
  FV_CHECK(!cfg_.out_dir.empty(), "train: no output directory configured");
  fs::create_directories(cfg_.out_dir);

  int start_epoch = 0, start_step = 0;
  if (!cfg_.resume_from.empty()) {
    load_checkpoint(cfg_.resume_from, model_.params());
    adam_->load_state(cfg_.resume_from);
    load_state(cfg_.resume_from, start_epoch, start_step);
  }

  for (int epoch = start_epoch; epoch < cfg_.epochs; ++epoch) {
    // per-epoch order and fresh random masks, both derivable for resume
    Rng epoch_rng(mix_seed(cfg_.seed, (uint64_t)epoch));
    std::vector<int> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = (int)i;
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[epoch_rng.uniform_int(0, (int)i - 1)]);
    std::vector<Tensor> masks(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) {
      MaskSpec ms;
      ms.kind = epoch_rng.uniform() < 0.5f ? MaskSpec::Kind::kBackgroundRandom
                                           : MaskSpec::Kind::kObject;
      masks[i] = generate_mask(ms, dataset[i].spec, epoch_rng);
    }

    const int steps_per_epoch = (int)(dataset.size() / cfg_.micro_batch);
    for (int s = (epoch == start_epoch ? start_step : 0); s < steps_per_epoch; ++s) {
      std::vector<const ClipSample*> batch;
      std::vector<const Tensor*> bmasks;
      for (int m = 0; m < cfg_.micro_batch; ++m) {
        const int idx = order[(size_t)s * cfg_.micro_batch + m];
        batch.push_back(&dataset[idx]);
        bmasks.push_back(&masks[idx]);
      }
      LossReport r = train_step(batch, bmasks);
      if (micro_steps_ % 25 == 0)
        std::fprintf(stderr, "epoch %d step %d/%d loss %.5f (diff %.5f flow %.5f)\n", epoch, s,
                     steps_per_epoch, r.total, r.diff, r.flow);
      if (cfg_.max_steps > 0 && micro_steps_ >= cfg_.max_steps) {
        const std::string dir = cfg_.out_dir + "/final";
        save_checkpoint(dir, model_.params(), model_.config());
        adam_->save_state(dir);
        save_state(dir, epoch, s + 1);
        return;
      }
    }
    const std::string dir = cfg_.out_dir + "/epoch_" + std::to_string(epoch);
    save_checkpoint(dir, model_.params(), model_.config());
    adam_->save_state(dir);
    save_state(dir, epoch + 1, 0);
  }
  const std::string dir = cfg_.out_dir + "/final";
  save_checkpoint(dir, model_.params(), model_.config());
  adam_->save_state(dir);
  save_state(dir, cfg_.epochs, 0);
}

void Trainer::save_state(const std::string& dir, int epoch, int step_in_epoch) {
  std::ofstream f(dir + "/state.txt");
  FV_CHECK(f.good(), "cannot write " << dir << "/state.txt");
  f << "epoch " << epoch << "\nstep " << step_in_epoch << "\nmicro_steps " << micro_steps_
    << "\nrng " << rng_.encode_state() << "\n";
}

void Trainer::load_state(const std::string& dir, int& epoch, int& step_in_epoch) {
  std::ifstream f(dir + "/state.txt");
  FV_CHECK(f.good(), "cannot read " << dir << "/state.txt");
  std::string key;
  while (f >> key) {
    if (key == "epoch") f >> epoch;
    else if (key == "step") f >> step_in_epoch;
    else if (key == "micro_steps") f >> micro_steps_;
    else if (key == "rng") {
      std::string a, b, c, d;
      f >> a >> b >> c >> d;
      rng_.decode_state(a + " " + b + " " + c + " " + d);
    }
  }
}

}  // namespace flowvid
