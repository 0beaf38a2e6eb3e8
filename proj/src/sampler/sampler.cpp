#include "sampler/sampler.hpp"

#include <chrono>
#include <cstring>

#include "core/check.hpp"
#include "core/ops.hpp"

namespace flowvid {

void SamplerConfig::validate() const {
  FV_CHECK(steps >= 1, "sampler: steps must be positive, got " << steps);
  FV_CHECK(speedup_steps >= 0 && speedup_steps <= steps - 1,
           "sampler: speed-up step count " << speedup_steps << " outside [0," << steps - 1
                                           << "]");
  FV_CHECK(guidance_scale > 0.0f, "sampler: non-positive guidance scale");
}

ParityPlan ParityPlan::make(int frames) {
  ParityPlan p;
  for (int i = 0; i < frames; ++i) (i % 2 == 0 ? p.even_indices : p.odd_indices).push_back(i);
  return p;
}

void NoisePredictor::fill_bank(const MultiScaleFlowFeatures&, MemoryBank&) {
  FV_CHECK(false, "this predictor has no adapters to cache");
}

Tensor copy_paste(const NoiseSchedule& s, const Tensor& z_next, const Tensor& z0_known,
                  const Tensor& mask, int t_prev, const Tensor& eps_fixed) {
  FV_CHECK(z_next.shape() == z0_known.shape() && z_next.shape() == eps_fixed.shape(),
           "copy_paste: latent shapes disagree: " << shape_str(z_next.shape()) << " vs "
                                                  << shape_str(z0_known.shape()) << " vs "
                                                  << shape_str(eps_fixed.shape()));
  Tensor noised = add_noise(s, z0_known, eps_fixed, t_prev);
  return ops::select_by_mask(mask, noised, z_next);
}

AnchoredInputs prepend_anchor(const Tensor& v_m, const Tensor& mask, const Tensor& anchor,
                              bool use_anchor) {
  FV_CHECK(v_m.rank() == 4, "prepend_anchor: frames must be (N,C,H,W), got "
                                << shape_str(v_m.shape()));
  const int N = v_m.dim(0), C = v_m.dim(1), H = v_m.dim(2), W = v_m.dim(3);
  FV_CHECK(mask.shape() == Shape({N, 1, H, W}),
           "prepend_anchor: mask " << shape_str(mask.shape()) << " vs frames "
                                   << shape_str(v_m.shape()));
  AnchoredInputs out;
  if (!use_anchor) {
    out.z0_known = v_m;
    out.mask = mask;
    out.clip_indices.resize(N);
    for (int i = 0; i < N; ++i) out.clip_indices[i] = i;
    out.anchored = false;
    return out;
  }
  FV_CHECK(anchor.defined() && anchor.shape() == Shape({C, H, W}),
           "prepend_anchor: anchor shape "
               << (anchor.defined() ? shape_str(anchor.shape()) : std::string("(undefined)"))
               << " vs frame (" << C << "," << H << "," << W << ")");
  out.z0_known = Tensor(Shape{N + 1, C, H, W});
  out.mask = Tensor::full({N + 1, 1, H, W}, 1.0f);
  std::memcpy(out.z0_known.data(), anchor.data(), anchor.numel() * sizeof(float));
  std::memcpy(out.z0_known.data() + anchor.numel(), v_m.data(), v_m.numel() * sizeof(float));
  std::memcpy(out.mask.data() + (size_t)H * W, mask.data(), mask.numel() * sizeof(float));
  out.clip_indices.resize(N + 1);
  out.clip_indices[0] = -1;
  for (int i = 0; i < N; ++i) out.clip_indices[i + 1] = i;
  out.anchored = true;
  return out;
}

namespace {

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  Shape s = x.shape();
  s[0] = (int)rows.size();
  Tensor y(s);
  const size_t block = x.numel() / (size_t)x.dim(0);
  for (size_t i = 0; i < rows.size(); ++i)
    std::memcpy(y.data() + i * block, x.data() + (size_t)rows[i] * block,
                block * sizeof(float));
  return y;
}

Tensor row_view_copy(const Tensor& x, int row) {
  Shape s(x.shape().begin() + 1, x.shape().end());
  Tensor y(s);
  const size_t block = x.numel() / (size_t)x.dim(0);
  std::memcpy(y.data(), x.data() + (size_t)row * block, block * sizeof(float));
  return y;
}

void write_row(Tensor& x, int row, const Tensor& value) {
  const size_t block = x.numel() / (size_t)x.dim(0);
  FV_CHECK(value.numel() == block, "write_row: size mismatch");
  std::memcpy(x.data() + (size_t)row * block, value.data(), block * sizeof(float));
}

}  // namespace

Sampler::Sampler(NoisePredictor& predictor, FlowCompleter* completer,
                 const NoiseSchedule& schedule)
    : predictor_(predictor), completer_(completer), schedule_(schedule) {}

Tensor Sampler::predict_eps(const SamplerConfig& cfg, const DenoiserBatch& batch,
                            const MultiScaleFlowFeatures* feats, const MemoryBank* bank) {
  ++stats_.denoiser_calls;
  stats_.denoiser_frame_forwards += batch.z_t.dim(0);
  Tensor eps_cond = predictor_.predict(batch, feats, bank);
  if (cfg.guidance_scale == 1.0f) return eps_cond;
  DenoiserBatch uncond = batch;
  uncond.cond.is_null = true;
  ++stats_.denoiser_calls;
  stats_.denoiser_frame_forwards += batch.z_t.dim(0);
  Tensor eps_uncond = predictor_.predict(uncond, feats, bank);
  return cfg_epsilon(eps_cond, eps_uncond, cfg.guidance_scale);
}

Tensor Sampler::sample(const SamplerConfig& cfg, const SampleInputs& in) {
  cfg.validate();
  NoGradGuard no_grad;
  const auto t_start = std::chrono::steady_clock::now();

  const int N = in.v_m.dim(0), C = in.v_m.dim(1), H = in.v_m.dim(2), W = in.v_m.dim(3);
  FV_CHECK(!(cfg.use_interpolation && cfg.speedup_steps > 0 && N < 2),
           "sampler: latent interpolation needs at least 2 frames, got " << N);

  predictor_.set_adapters_enabled(cfg.adapters_enabled);
  const bool adapters = cfg.adapters_enabled && predictor_.has_adapters();
  const bool interp_enabled = cfg.use_interpolation && cfg.speedup_steps > 0 && N >= 2;
  const bool need_flow = adapters || interp_enabled;
  stats_.reset(predictor_.num_scales());
  predictor_.set_stats(&stats_);
  if (completer_) completer_->set_stats(&stats_);

  // hole content must not leak in through v_m
  Tensor v_m = ops::select_by_mask(in.mask, in.v_m, Tensor::zeros(in.v_m.shape()));
  AnchoredInputs rows = prepend_anchor(v_m, in.mask, in.anchor, cfg.use_anchor);
  const int F = rows.z0_known.dim(0);

  Rng rng(cfg.seed);
  Tensor eps_fixed = Tensor::randn({F, C, H, W}, rng);

  CorruptedFlow corrupted;
  CompletedFlow completed;
  MultiScaleFlowFeatures feats;
  MemoryBank bank;
  bool bank_ready = false;
  if (need_flow) {
    FV_CHECK(in.flow_source.forward.defined(),
             "sampler: flow guidance or interpolation enabled but no flow source given");
    corrupted = estimate_corrupted_flow(in.flow_source, in.mask);
    FV_CHECK(completer_ != nullptr, "sampler: no flow completer wired in");
    auto res = completer_->complete(corrupted);
    completed = std::move(res.first);
    feats = std::move(res.second);
    if (cfg.use_cache && adapters) {
      predictor_.fill_bank(feats, bank);
      bank_ready = true;
    }
  }

  const std::vector<int> ts = schedule_.inference_timesteps(cfg.steps);
  Tensor z = add_noise(schedule_, rows.z0_known, eps_fixed, ts[0]);

  std::vector<Tensor> last_z0((size_t)N);
  ParityPlan plan = ParityPlan::make(N);

  const MultiScaleFlowFeatures* feats_ptr = (adapters && !bank_ready) ? &feats : nullptr;
  const MemoryBank* bank_ptr = bank_ready ? &bank : nullptr;

  const size_t hw = (size_t)H * W;
  for (int j = 0; j < cfg.steps; ++j) {
    const int t = ts[j];
    const int t_prev = j + 1 < cfg.steps ? ts[j + 1] : -1;
    const bool interp_step = interp_enabled && j >= 1 && j <= cfg.speedup_steps;

    if (cfg.flow_branch_every_step && need_flow && j > 0)
      completer_->complete(corrupted);  // naive reference: redundant by design

    Tensor z_prev(z.shape());
    if (!interp_step) {
      DenoiserBatch batch;
      batch.z_t = z;
      batch.mask = rows.mask;
      batch.z_masked = rows.z0_known;
      batch.t = t;
      batch.cond = in.cond;
      batch.clip_indices = rows.clip_indices;
      batch.anchored = rows.anchored;
      Tensor eps = predict_eps(cfg, batch, feats_ptr, bank_ptr);
      z_prev = ddim_step(schedule_, z, eps, t, t_prev);
      Tensor z0_all = predict_z0(schedule_, z, eps, t);
      for (int i = 0; i < N; ++i)
        last_z0[i] = row_view_copy(z0_all, rows.anchored ? i + 1 : i);
    } else {
      const std::vector<int>& active = plan.active_set();
      const std::vector<int>& inactive = plan.inactive_set();
      std::vector<int> active_rows(active.size());
      for (size_t a = 0; a < active.size(); ++a)
        active_rows[a] = rows.anchored ? active[a] + 1 : active[a];

      DenoiserBatch batch;
      batch.z_t = gather_rows(z, active_rows);
      batch.mask = gather_rows(rows.mask, active_rows);
      batch.z_masked = gather_rows(rows.z0_known, active_rows);
      batch.t = t;
      batch.cond = in.cond;
      batch.clip_indices = active;
      batch.anchored = rows.anchored;
      Tensor eps_act = predict_eps(cfg, batch, feats_ptr, bank_ptr);
      Tensor z0_act = predict_z0(schedule_, batch.z_t, eps_act, t);
      Tensor zprev_act = ddim_step(schedule_, batch.z_t, eps_act, t, t_prev);
      for (size_t a = 0; a < active.size(); ++a) {
        last_z0[active[a]] = row_view_copy(z0_act, (int)a);
        write_row(z_prev, active_rows[a], row_view_copy(zprev_act, (int)a));
      }

      // inactive frames: warp fresh neighbor estimates at the clean stage
      const int P = N - 1;
      for (int i : inactive) {
        Tensor blended(Shape{C, H, W});
        std::vector<float> wsum(hw, 0.0f);
        float* pb = blended.data();
        std::memset(pb, 0, blended.numel() * sizeof(float));
        auto accumulate = [&](const Tensor& src_z0, const Tensor& flow2) {
          auto [warped, valid] = backward_warp(src_z0, flow2);
          const float* pw = warped.data();
          const float* pv = valid.data();
          for (size_t p = 0; p < hw; ++p) {
            if (pv[p] <= 0.5f) continue;
            wsum[p] += 1.0f;
            for (int c = 0; c < C; ++c) pb[c * hw + p] += pw[c * hw + p];
          }
        };
        if (i - 1 >= 0) {
          Tensor bwd =
              ops::slice(completed.flow.backward, 0, i - 1, 1).reshaped({2, H, W});
          accumulate(last_z0[i - 1], bwd);
        }
        if (i + 1 <= P) {
          Tensor fwd = ops::slice(completed.flow.forward, 0, i, 1).reshaped({2, H, W});
          accumulate(last_z0[i + 1], fwd);
        }
        const Tensor& fb = last_z0[i];  // fallback: own previous clean estimate
        const float* pf = fb.data();
        for (size_t p = 0; p < hw; ++p) {
          if (wsum[p] > 0.0f) {
            const float inv = 1.0f / wsum[p];
            for (int c = 0; c < C; ++c) pb[c * hw + p] *= inv;
          } else {
            for (int c = 0; c < C; ++c) pb[c * hw + p] = pf[c * hw + p];
          }
        }
        const int row = rows.anchored ? i + 1 : i;
        Tensor z_i = row_view_copy(z, row);
        Tensor eps_i = invert_to_eps(schedule_, z_i, blended, t);
        write_row(z_prev, row, ddim_step(schedule_, z_i, eps_i, t, t_prev));
      }
      if (rows.anchored) write_row(z_prev, 0, row_view_copy(z, 0));  // overwritten below
      plan.alternate();
    }

    z = copy_paste(schedule_, z_prev, rows.z0_known, rows.mask, t_prev, eps_fixed);
  }

  const auto t_end = std::chrono::steady_clock::now();
  wall_ms_ = std::chrono::duration<double, std::milli>(t_end - t_start).count();

  if (!rows.anchored) return z;
  return ops::slice(z, 0, 1, N);
}

}  // namespace flowvid
