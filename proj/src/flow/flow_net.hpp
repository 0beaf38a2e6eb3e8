#pragma once

#include <utility>

#include "core/param.hpp"
#include "core/rng.hpp"
#include "flow/flow_field.hpp"
#include "model/common.hpp"
#include "model/layers.hpp"

namespace flowvid {

// Flow completion sub-branch: one residual conv layer per primary-branch
// block position, encoder to decoder, no timestep anywhere. Consumes
// [fwd | bwd | hole] (5 channels per pair) and emits the composited
// completed flow plus channel-matched features for every up block.
class FlowNet {
 public:
  FlowNet(ParamStore& ps, const ModelConfig& cfg, Rng& rng);

  // Pure function of its inputs; calling twice gives bit-identical results.
  std::pair<CompletedFlow, MultiScaleFlowFeatures> complete(const CorruptedFlow& corrupted);

  void set_stats(RunStats* stats) { stats_ = stats; }

 private:
  ModelConfig cfg_;
  RunStats* stats_ = nullptr;

  Conv2dLayer stem_;
  std::vector<ResConvBlock> down_;
  std::vector<Conv2dLayer> downsample_;
  ResConvBlock mid_;
  std::vector<ResConvBlock> up_;
  std::vector<Conv2dLayer> up_conv_;     // after each upsample
  std::vector<Conv2dLayer> skip_merge_;  // 1x1 reducers after skip concat
  ChannelNorm head_norm_;
  Conv2dLayer head_;
};

}  // namespace flowvid
