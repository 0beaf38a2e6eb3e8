#include "flow/flow_net.hpp"

#include "core/check.hpp"
#include "core/ops.hpp"

namespace flowvid {

FlowNet::FlowNet(ParamStore& ps, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int L = cfg.levels;
  stem_ = Conv2dLayer(ps, "flow.stem", ParamGroup::kFlowBranch, 5, cfg.width(0), 3, 1, 1, rng);
  for (int l = 0; l + 1 < L; ++l) {
    down_.emplace_back(ps, "flow.down" + std::to_string(l), ParamGroup::kFlowBranch,
                       cfg.width(l), rng);
    downsample_.emplace_back(ps, "flow.ds" + std::to_string(l), ParamGroup::kFlowBranch,
                             cfg.width(l), cfg.width(l + 1), 3, 2, 1, rng);
  }
  mid_ = ResConvBlock(ps, "flow.mid", ParamGroup::kFlowBranch, cfg.width(L - 1), rng);
  for (int i = 0; i < L; ++i) {
    const int w = cfg.width(L - 1 - i);
    up_.emplace_back(ps, "flow.up" + std::to_string(i), ParamGroup::kFlowBranch, w, rng);
    if (i + 1 < L) {
      const int wn = cfg.width(L - 2 - i);
      up_conv_.emplace_back(ps, "flow.us" + std::to_string(i), ParamGroup::kFlowBranch, w, wn, 3,
                            1, 1, rng);
      skip_merge_.emplace_back(ps, "flow.merge" + std::to_string(i), ParamGroup::kFlowBranch,
                               2 * wn, wn, 1, 1, 0, rng);
    }
  }
  head_norm_ = ChannelNorm(ps, "flow.head_norm", ParamGroup::kFlowBranch, cfg.width(0));
  // zero-initialized head: the branch starts as the composite identity
  head_ = Conv2dLayer(ps, "flow.head", ParamGroup::kFlowBranch, cfg.width(0), 4, 3, 1, 1, rng,
                      /*zero_init=*/true);
}

std::pair<CompletedFlow, MultiScaleFlowFeatures> FlowNet::complete(
    const CorruptedFlow& corrupted) {
  corrupted.flow.validate();
  const int P = corrupted.flow.pairs();
  const int H = corrupted.flow.height(), W = corrupted.flow.width();
  FV_CHECK(corrupted.holes.shape() == Shape({P, 1, H, W}),
           "complete: hole map " << shape_str(corrupted.holes.shape()) << " vs flow "
                                 << shape_str(corrupted.flow.forward.shape()));
  if (stats_) ++stats_->flow_branch_calls;

  Tensor x = ops::concat(1, {corrupted.flow.forward, corrupted.flow.backward, corrupted.holes});
  x = stem_.forward(x);
  std::vector<Tensor> skips;
  const Tensor no_temb;
  for (size_t l = 0; l < down_.size(); ++l) {
    x = down_[l].forward(x, no_temb);
    skips.push_back(x);
    x = downsample_[l].forward(x);
  }
  x = mid_.forward(x, no_temb);

  MultiScaleFlowFeatures feats;
  const int L = cfg_.levels;
  for (int i = 0; i < L; ++i) {
    x = up_[i].forward(x, no_temb);
    feats.scales.push_back(x);
    if (i + 1 < L) {
      x = up_conv_[i].forward(ops::upsample2x(x));
      x = skip_merge_[i].forward(ops::concat(1, {x, skips[L - 2 - i]}));
    }
  }

  Tensor pred = head_.forward(ops::silu(head_norm_.forward(x)));  // (P,4,H,W)

  // Composite: prediction inside the union hole, input flow outside. The
  // additive form keeps gradients flowing into the head while leaving the
  // known region numerically untouched (0*pred + 1*known).
  Tensor hole2 = Tensor(Shape{P, 2, H, W});
  {
    const float* h = corrupted.holes.data();
    float* h2 = hole2.data();
    const size_t hw = (size_t)H * W;
    for (int k = 0; k < P; ++k)
      for (int c = 0; c < 2; ++c)
        std::copy(h + k * hw, h + (k + 1) * hw, h2 + ((size_t)k * 2 + c) * hw);
  }
  Tensor keep2 = Tensor(hole2.shape());
  {
    const float* h = hole2.data();
    float* kp = keep2.data();
    for (size_t i = 0; i < hole2.numel(); ++i) kp[i] = 1.0f - h[i];
  }
  Tensor pred_f = ops::slice(pred, 1, 0, 2);
  Tensor pred_b = ops::slice(pred, 1, 2, 2);

  CompletedFlow out;
  out.flow.forward =
      ops::add(ops::mul(hole2, pred_f), ops::mul(keep2, corrupted.flow.forward));
  out.flow.backward =
      ops::add(ops::mul(hole2, pred_b), ops::mul(keep2, corrupted.flow.backward));
  {
    NoGradGuard ng;
    FlowPair detached;
    detached.forward = out.flow.forward.clone();
    detached.backward = out.flow.backward.clone();
    out.validity = forward_backward_consistency(detached);
  }
  return {out, feats};
}

}  // namespace flowvid
