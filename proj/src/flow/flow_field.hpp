#pragma once

#include <string>
#include <utility>

#include "core/tensor.hpp"

namespace flowvid {

// Bidirectional optical flow for N frames = N-1 adjacent pairs, displacement
// in pixels, channel 0 = dx, channel 1 = dy.
//   forward[k]:  at frame-k pixels, where content lands in frame k+1
//   backward[k]: at frame-(k+1) pixels, where content came from in frame k
struct FlowPair {
  Tensor forward;   // (P,2,H,W)
  Tensor backward;  // (P,2,H,W)

  int pairs() const { return forward.defined() ? forward.dim(0) : 0; }
  int height() const { return forward.dim(2); }
  int width() const { return forward.dim(3); }
  void validate() const;
};

// Completion output: the composited prediction plus a forward-backward
// consistency weight in [0,1] per pair.
struct CompletedFlow {
  FlowPair flow;
  Tensor validity;  // (P,1,H,W)
};

// Corrupted flow as a desk-scale stand-in for a pretrained estimator: the
// source flow zeroed wherever either frame of the pair has a hole.
struct CorruptedFlow {
  FlowPair flow;
  Tensor holes;  // (P,1,H,W), 1 = unreliable (inside the union hole)
};

// masks are (N,1,H,W) with 1 = known, 0 = hole. source must cover N-1 pairs.
CorruptedFlow estimate_corrupted_flow(const FlowPair& source, const Tensor& masks);

// Bilinear sample of x at p + flow(p). Samples outside the frame get
// validity 0 and keep the unwarped source value at p.
std::pair<Tensor, Tensor> backward_warp(const Tensor& x, const Tensor& flow);

// exp(-|fwd(p) + bwd(p+fwd(p))|^2) per pixel, one map per pair.
Tensor forward_backward_consistency(const FlowPair& flow);

// Mean L1 over both directions.
Tensor flow_loss(const CompletedFlow& pred, const FlowPair& gt);
Tensor combined_loss(const Tensor& diff, const Tensor& flow, float lambda);

// ".flo2": magic "FLO2", u32 pairs, u32 H, u32 W, then the forward plane and
// the backward plane as little-endian f32.
void write_flo2(const std::string& path, const FlowPair& flow);
FlowPair read_flo2(const std::string& path);

}  // namespace flowvid
