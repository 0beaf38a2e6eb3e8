#pragma once

#include <string>
#include <vector>

#include "core/ops.hpp"
#include "core/param.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace flowvid {

// Parameter-owning building blocks. Construction registers parameters in the
// store under a hierarchical name and a group; forward methods are free of
// any other state.

struct LinearLayer {
  Tensor w, b;  // b optional (undefined = none)
  LinearLayer() = default;
  LinearLayer(ParamStore& ps, const std::string& name, ParamGroup g, int din, int dout,
              Rng& rng, float wstd, bool bias = true);
  Tensor forward(const Tensor& x) const;
};

struct Conv2dLayer {
  Tensor w, b;
  int stride = 1, pad = 1;
  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& ps, const std::string& name, ParamGroup g, int cin, int cout,
              int ksize, int stride, int pad, Rng& rng, bool zero_init = false);
  Tensor forward(const Tensor& x) const;
};

struct ChannelNorm {
  Tensor gain, bias;
  ChannelNorm() = default;
  ChannelNorm(ParamStore& ps, const std::string& name, ParamGroup g, int channels);
  Tensor forward(const Tensor& x) const;
};

// norm -> silu -> conv3x3 (+ per-channel time bias) added back to the input.
struct ResConvBlock {
  ChannelNorm norm;
  Conv2dLayer conv;
  LinearLayer time_proj;  // optional: projects the time embedding to C
  ResConvBlock() = default;
  ResConvBlock(ParamStore& ps, const std::string& name, ParamGroup g, int channels, Rng& rng,
               int time_hidden = 0);
  // temb: (time_hidden) vector or undefined when the block is timestep-free.
  Tensor forward(const Tensor& x, const Tensor& temb) const;
};

struct AttentionProjs {
  Tensor wq, wk, wv, wo;
};

// Self-attention across spatial positions, independently per frame.
struct SpatialSelfAttention {
  ChannelNorm norm;
  AttentionProjs p;
  int channels = 0;
  SpatialSelfAttention() = default;
  SpatialSelfAttention(ParamStore& ps, const std::string& name, ParamGroup g, int channels,
                       Rng& rng);
  Tensor forward(const Tensor& x) const;
};

// Cross-attention against condition tokens; also lends its norm and query
// projection to the flow adapter sharing this block.
struct ConditionCrossAttention {
  ChannelNorm norm;
  Tensor wq, wk, wv, wo;  // wk/wv map cond_dim -> channels
  int channels = 0;
  ConditionCrossAttention() = default;
  ConditionCrossAttention(ParamStore& ps, const std::string& name, ParamGroup g, int channels,
                          int cond_dim, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& cond_tokens) const;
  // normalized hidden projected with the shared query weight, (F,HW,C)
  Tensor project_queries(const Tensor& x) const;
};

// Attention across the frame axis at each spatial position. The output
// projection starts at zero so a fresh model reduces to its spatial part.
struct TemporalAttention {
  ChannelNorm norm;
  AttentionProjs p;
  Tensor pos_table;  // (max_positions, C), learned frame-position embedding
  int channels = 0;
  TemporalAttention() = default;
  TemporalAttention(ParamStore& ps, const std::string& name, ParamGroup g, int channels,
                    int max_positions, Rng& rng);
  Tensor forward(const Tensor& x, const std::vector<int>& frame_pos) const;
};

// Decoupled key/value projections over flow features plus a zero-initialized
// residual scale.
struct AdapterLayer {
  Tensor key_proj, value_proj;  // (C, C): flow features arrive channel-matched
  Tensor gamma;                 // scalar, starts at 0 so the layer is a no-op
  int channels = 0;
  AdapterLayer() = default;
  AdapterLayer(ParamStore& ps, const std::string& name, ParamGroup g, int channels, Rng& rng);
};

// y = x * s, s a learned scalar tensor.
Tensor scale_by(const Tensor& x, const Tensor& s);

// Sinusoidal timestep features (not learned).
Tensor timestep_features(int t, int dim);

}  // namespace flowvid
