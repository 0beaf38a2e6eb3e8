#pragma once

#include <memory>
#include <vector>

#include "diffusion/schedule.hpp"
#include "flow/flow_field.hpp"
#include "model/denoiser.hpp"

namespace flowvid {

struct SamplerConfig {
  int steps = 25;
  int speedup_steps = 5;  // number of early steps that interpolate latents
  float guidance_scale = 15.0f;
  bool use_anchor = true;
  bool use_interpolation = true;
  bool use_cache = true;
  uint64_t seed = 0;
  bool adapters_enabled = true;        // off = no flow guidance at all
  bool flow_branch_every_step = false;  // naive reference for the bench
  void validate() const;
};

// Frame parity bookkeeping for the interpolation phase.
struct ParityPlan {
  std::vector<int> even_indices, odd_indices;
  int active = 0;  // 0 = even set is denoised, 1 = odd
  static ParityPlan make(int frames);
  const std::vector<int>& active_set() const { return active == 0 ? even_indices : odd_indices; }
  const std::vector<int>& inactive_set() const { return active == 0 ? odd_indices : even_indices; }
  void alternate() { active ^= 1; }
};

// Model access used by the sampler; tests substitute oracle predictors.
struct NoisePredictor {
  virtual ~NoisePredictor() = default;
  virtual Tensor predict(const DenoiserBatch& batch, const MultiScaleFlowFeatures* feats,
                         const MemoryBank* bank) = 0;
  virtual bool has_adapters() const { return false; }
  virtual void set_adapters_enabled(bool) {}
  virtual void set_stats(RunStats*) {}
  virtual void fill_bank(const MultiScaleFlowFeatures&, MemoryBank&);
  virtual int num_scales() const { return 0; }
};

struct FlowCompleter {
  virtual ~FlowCompleter() = default;
  virtual std::pair<CompletedFlow, MultiScaleFlowFeatures> complete(
      const CorruptedFlow& corrupted) = 0;
  virtual void set_stats(RunStats*) {}
};

struct ModelPredictor final : NoisePredictor {
  Denoiser& d;
  explicit ModelPredictor(Denoiser& den) : d(den) {}
  Tensor predict(const DenoiserBatch& b, const MultiScaleFlowFeatures* f,
                 const MemoryBank* bk) override {
    return d.forward(b, f, bk);
  }
  bool has_adapters() const override { return d.adapters_enabled(); }
  void set_adapters_enabled(bool on) override { d.set_adapters_enabled(on); }
  void set_stats(RunStats* s) override { d.set_stats(s); }
  void fill_bank(const MultiScaleFlowFeatures& f, MemoryBank& b) override { d.fill_bank(f, b); }
  int num_scales() const override { return d.num_scales(); }
};

struct ModelFlowCompleter final : FlowCompleter {
  FlowNet& fn;
  explicit ModelFlowCompleter(FlowNet& net) : fn(net) {}
  std::pair<CompletedFlow, MultiScaleFlowFeatures> complete(const CorruptedFlow& c) override {
    return fn.complete(c);
  }
  void set_stats(RunStats* s) override { fn.set_stats(s); }
};

struct SampleInputs {
  Tensor v_m;   // (N,C,H,W), holes zeroed (re-applied from the mask anyway)
  Tensor mask;  // (N,1,H,W), 1 = known
  FlowPair flow_source;  // ground-truth or externally estimated flow
  Tensor anchor;         // (C,H,W); required when use_anchor is on
  Cond cond;
};

// Known-region replacement: mask ? add_noise(z0_known, eps_fixed, t_prev) : z_next.
// t_prev = -1 selects z0_known directly, keeping the final step bit-exact.
Tensor copy_paste(const NoiseSchedule& s, const Tensor& z_next, const Tensor& z0_known,
                  const Tensor& mask, int t_prev, const Tensor& eps_fixed);

struct AnchoredInputs {
  Tensor z0_known;  // (F',C,H,W); anchor row first when present
  Tensor mask;      // (F',1,H,W); anchor row is all-known
  std::vector<int> clip_indices;  // -1 marks the anchor row
  bool anchored = false;
};

// Prepends the externally inpainted anchor frame; the sampler drops it again
// before returning.
AnchoredInputs prepend_anchor(const Tensor& v_m, const Tensor& mask, const Tensor& anchor,
                              bool use_anchor);

class Sampler {
 public:
  Sampler(NoisePredictor& predictor, FlowCompleter* completer, const NoiseSchedule& schedule);

  // Full pipeline. Returns decoded frames (N,C,H,W), anchor dropped.
  Tensor sample(const SamplerConfig& cfg, const SampleInputs& in);

  const RunStats& stats() const { return stats_; }
  RunStats& stats() { return stats_; }
  double last_wall_ms() const { return wall_ms_; }

 private:
  Tensor predict_eps(const SamplerConfig& cfg, const DenoiserBatch& batch,
                     const MultiScaleFlowFeatures* feats, const MemoryBank* bank);

  NoisePredictor& predictor_;
  FlowCompleter* completer_;
  NoiseSchedule schedule_;
  RunStats stats_;
  double wall_ms_ = 0.0;
};

}  // namespace flowvid
