#pragma once

#include <vector>

#include "core/param.hpp"
#include "core/rng.hpp"
#include "flow/flow_net.hpp"
#include "model/common.hpp"
#include "model/layers.hpp"

namespace flowvid {

// Primary inpainting branch: encoder-decoder over per-frame latents. Every
// block runs conv mixer -> spatial self-attention -> condition
// cross-attention -> temporal attention; up blocks additionally carry a flow
// adapter between the condition attention and the temporal layer.
class Denoiser {
 public:
  Denoiser(ParamStore& ps, const ModelConfig& cfg, Rng& rng);

  // feats/bank feed the adapters; exactly one is consulted. With adapters
  // enabled and neither present, throws. Output is (F, C, H, W) predicted
  // noise.
  Tensor forward(const DenoiserBatch& batch, const MultiScaleFlowFeatures* feats,
                 const MemoryBank* bank);

  // Projects adapter keys/values for every scale into the bank. The bank
  // must be empty; refilling is an error.
  void fill_bank(const MultiScaleFlowFeatures& feats, MemoryBank& bank);

  void set_adapters_enabled(bool on) { adapters_enabled_ = on; }
  bool adapters_enabled() const { return adapters_enabled_; }
  void set_stats(RunStats* stats) { stats_ = stats; }
  int num_scales() const { return cfg_.levels; }
  const ModelConfig& config() const { return cfg_; }

  Tensor cond_tokens(const Cond& cond) const;  // (K, D)

  // Exposed for unit tests: the temporal layer of the given up block.
  TemporalAttention& up_temporal(int i) { return up_[i].tattn; }
  AdapterLayer& up_adapter(int i) { return up_[i].adapter; }

 private:
  struct Block {
    ResConvBlock res;
    SpatialSelfAttention sattn;
    ConditionCrossAttention cattn;
    TemporalAttention tattn;
    bool has_adapter = false;
    AdapterLayer adapter;
  };

  struct ScaleKV {
    Tensor k, v;  // (P*hw_s, C_s)
  };

  Block make_block(ParamStore& ps, const std::string& name, int channels, bool with_adapter,
                   Rng& rng);
  Tensor run_block(const Block& blk, Tensor x, const Tensor& temb, const Tensor& cond,
                   const std::vector<int>& frame_pos, const ScaleKV* kv,
                   const std::vector<std::pair<int, int>>& pair_ranges);
  ScaleKV project_scale(int scale, const Tensor& feats_scale);

  ModelConfig cfg_;
  bool adapters_enabled_ = true;
  RunStats* stats_ = nullptr;

  Tensor cond_table_;  // (num_classes+1, K*D); last row is the null entry
  LinearLayer time_l1_, time_l2_;
  Conv2dLayer stem_;
  std::vector<Block> down_;
  std::vector<Conv2dLayer> downsample_;
  Block mid_;
  std::vector<Block> up_;
  std::vector<Conv2dLayer> up_conv_;
  std::vector<Conv2dLayer> skip_merge_;
  ChannelNorm head_norm_;
  Conv2dLayer head_;
};

// The full trainable artifact: shared parameter store, primary branch and
// flow branch, with the two-stage trainability switch.
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t init_seed);

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  Denoiser& denoiser() { return *denoiser_; }
  FlowNet& flow_net() { return *flow_net_; }
  const ModelConfig& config() const { return cfg_; }

  // Stage 1 trains the motion group only; stage 2 trains motion, flow branch
  // and adapters. Spatial and condition groups stay frozen in both.
  void set_stage(int stage);
  int stage() const { return stage_; }

  void set_stats(RunStats* stats);

 private:
  ModelConfig cfg_;
  ParamStore params_;
  std::unique_ptr<Denoiser> denoiser_;
  std::unique_ptr<FlowNet> flow_net_;
  int stage_ = 0;
};

}  // namespace flowvid
