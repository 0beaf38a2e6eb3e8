#include "model/layers.hpp"

#include <cmath>

#include "core/check.hpp"
#include "core/tape.hpp"

namespace flowvid {

LinearLayer::LinearLayer(ParamStore& ps, const std::string& name, ParamGroup g, int din,
                         int dout, Rng& rng, float wstd, bool bias) {
  w = ps.add(name + ".w", g, Tensor::randn({din, dout}, rng, wstd));
  if (bias) b = ps.add(name + ".b", g, Tensor::zeros({dout}));
}

Tensor LinearLayer::forward(const Tensor& x) const {
  return b.defined() ? ops::linear(x, w, b) : ops::linear_nobias(x, w);
}

Conv2dLayer::Conv2dLayer(ParamStore& ps, const std::string& name, ParamGroup g, int cin,
                         int cout, int ksize, int stride_, int pad_, Rng& rng, bool zero_init)
    : stride(stride_), pad(pad_) {
  const float wstd = zero_init ? 0.0f : std::sqrt(2.0f / (float)(cin * ksize * ksize));
  w = ps.add(name + ".w", g, Tensor::randn({cout, cin, ksize, ksize}, rng, wstd));
  b = ps.add(name + ".b", g, Tensor::zeros({cout}));
}

Tensor Conv2dLayer::forward(const Tensor& x) const { return ops::conv2d(x, w, b, stride, pad); }

ChannelNorm::ChannelNorm(ParamStore& ps, const std::string& name, ParamGroup g, int channels) {
  gain = ps.add(name + ".g", g, Tensor::full({channels}, 1.0f));
  bias = ps.add(name + ".b", g, Tensor::zeros({channels}));
}

Tensor ChannelNorm::forward(const Tensor& x) const {
  return ops::channel_layernorm(x, gain, bias);
}

ResConvBlock::ResConvBlock(ParamStore& ps, const std::string& name, ParamGroup g, int channels,
                           Rng& rng, int time_hidden)
    : norm(ps, name + ".norm", g, channels),
      conv(ps, name + ".conv", g, channels, channels, 3, 1, 1, rng) {
  if (time_hidden > 0)
    time_proj = LinearLayer(ps, name + ".time", g, time_hidden, channels, rng,
                            0.5f / std::sqrt((float)time_hidden));
}

Tensor ResConvBlock::forward(const Tensor& x, const Tensor& temb) const {
  Tensor h = conv.forward(ops::silu(norm.forward(x)));
  if (temb.defined()) {
    FV_CHECK(time_proj.w.defined(), "time embedding passed to a timestep-free block");
    Tensor tb = time_proj.forward(temb.reshaped({1, temb.dim(0)}));
    h = ops::add_channel_bias(h, tb.reshaped({tb.dim(1)}));
  }
  return ops::add(x, h);
}

namespace {

// (F,C,H,W) -> (F, H*W, C)
Tensor to_tokens(const Tensor& x) {
  Tensor t = ops::permute(x, {0, 2, 3, 1});
  return t.reshaped({x.dim(0), x.dim(2) * x.dim(3), x.dim(1)});
}

Tensor from_tokens(const Tensor& t, int H, int W) {
  Tensor r = t.reshaped({t.dim(0), H, W, t.dim(2)});
  return ops::permute(r, {0, 3, 1, 2});
}

}  // namespace

SpatialSelfAttention::SpatialSelfAttention(ParamStore& ps, const std::string& name, ParamGroup g,
                                           int channels_, Rng& rng)
    : norm(ps, name + ".norm", g, channels_), channels(channels_) {
  const float qkv = 1.0f / std::sqrt((float)channels_);
  p.wq = ps.add(name + ".wq", g, Tensor::randn({channels_, channels_}, rng, qkv));
  p.wk = ps.add(name + ".wk", g, Tensor::randn({channels_, channels_}, rng, qkv));
  p.wv = ps.add(name + ".wv", g, Tensor::randn({channels_, channels_}, rng, qkv));
  p.wo = ps.add(name + ".wo", g, Tensor::randn({channels_, channels_}, rng, 0.5f * qkv));
}

Tensor SpatialSelfAttention::forward(const Tensor& x) const {
  Tensor t = to_tokens(norm.forward(x));
  Tensor q = ops::linear_nobias(t, p.wq);
  Tensor k = ops::linear_nobias(t, p.wk);
  Tensor v = ops::linear_nobias(t, p.wv);
  Tensor a = ops::softmax_attention(q, k, v, 1.0f / std::sqrt((float)channels));
  Tensor o = ops::linear_nobias(a, p.wo);
  return ops::add(x, from_tokens(o, x.dim(2), x.dim(3)));
}

ConditionCrossAttention::ConditionCrossAttention(ParamStore& ps, const std::string& name,
                                                 ParamGroup g, int channels_, int cond_dim,
                                                 Rng& rng)
    : norm(ps, name + ".norm", g, channels_), channels(channels_) {
  const float qs = 1.0f / std::sqrt((float)channels_);
  const float ks = 1.0f / std::sqrt((float)cond_dim);
  wq = ps.add(name + ".wq", g, Tensor::randn({channels_, channels_}, rng, qs));
  wk = ps.add(name + ".wk", g, Tensor::randn({cond_dim, channels_}, rng, ks));
  wv = ps.add(name + ".wv", g, Tensor::randn({cond_dim, channels_}, rng, ks));
  wo = ps.add(name + ".wo", g, Tensor::randn({channels_, channels_}, rng, 0.5f * qs));
}

Tensor ConditionCrossAttention::forward(const Tensor& x, const Tensor& cond_tokens) const {
  FV_CHECK(cond_tokens.rank() == 2, "condition tokens must be (K,D), got "
                                        << shape_str(cond_tokens.shape()));
  Tensor t = to_tokens(norm.forward(x));
  Tensor q = ops::linear_nobias(t, wq);
  Tensor k = ops::linear_nobias(cond_tokens, wk).reshaped({1, cond_tokens.dim(0), channels});
  Tensor v = ops::linear_nobias(cond_tokens, wv).reshaped({1, cond_tokens.dim(0), channels});
  Tensor a = ops::softmax_attention(q, k, v, 1.0f / std::sqrt((float)channels));
  Tensor o = ops::linear_nobias(a, wo);
  return ops::add(x, from_tokens(o, x.dim(2), x.dim(3)));
}

Tensor ConditionCrossAttention::project_queries(const Tensor& x) const {
  return ops::linear_nobias(to_tokens(norm.forward(x)), wq);
}

TemporalAttention::TemporalAttention(ParamStore& ps, const std::string& name, ParamGroup g,
                                     int channels_, int max_positions, Rng& rng)
    : norm(ps, name + ".norm", g, channels_), channels(channels_) {
  const float qkv = 1.0f / std::sqrt((float)channels_);
  p.wq = ps.add(name + ".wq", g, Tensor::randn({channels_, channels_}, rng, qkv));
  p.wk = ps.add(name + ".wk", g, Tensor::randn({channels_, channels_}, rng, qkv));
  p.wv = ps.add(name + ".wv", g, Tensor::randn({channels_, channels_}, rng, qkv));
  p.wo = ps.add(name + ".wo", g, Tensor::zeros({channels_, channels_}));
  pos_table = ps.add(name + ".pos", g, Tensor::randn({max_positions, channels_}, rng, 0.02f));
}

Tensor TemporalAttention::forward(const Tensor& x, const std::vector<int>& frame_pos) const {
  const int F = x.dim(0), H = x.dim(2), W = x.dim(3);
  FV_CHECK((int)frame_pos.size() == F,
           "temporal attention: " << frame_pos.size() << " positions for " << F << " frames");
  // (F,C,H,W) -> (H*W, F, C): attention runs across frames per position
  Tensor t = ops::permute(norm.forward(x), {2, 3, 0, 1}).reshaped({H * W, F, channels});
  Tensor emb = ops::row_gather(pos_table, frame_pos);
  t = ops::add_rows(t, emb);
  Tensor q = ops::linear_nobias(t, p.wq);
  Tensor k = ops::linear_nobias(t, p.wk);
  Tensor v = ops::linear_nobias(t, p.wv);
  Tensor a = ops::softmax_attention(q, k, v, 1.0f / std::sqrt((float)channels));
  Tensor o = ops::linear_nobias(a, p.wo);
  o = ops::permute(o.reshaped({H, W, F, channels}), {2, 3, 0, 1});
  return ops::add(x, o);
}

AdapterLayer::AdapterLayer(ParamStore& ps, const std::string& name, ParamGroup g, int channels_,
                           Rng& rng)
    : channels(channels_) {
  const float s = 1.0f / std::sqrt((float)channels_);
  key_proj = ps.add(name + ".wk", g, Tensor::randn({channels_, channels_}, rng, s));
  value_proj = ps.add(name + ".wv", g, Tensor::randn({channels_, channels_}, rng, s));
  gamma = ps.add(name + ".gamma", g, Tensor::zeros({1}));
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  FV_CHECK(s.numel() == 1, "scale_by: scale must be a scalar tensor, got "
                               << shape_str(s.shape()));
  Tensor y = ops::scale(x, s.item());
  if (tape_wants(x, s)) {
    y.set_requires_grad(true);
    Tensor tx = x, ts = s, ty = y;
    Tape::instance().push([tx, ts, ty]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      if (ts.requires_grad()) {
        double acc = 0.0;
        const float* px = tx.data();
        for (size_t i = 0; i < tx.numel(); ++i) acc += (double)g[i] * px[i];
        ts.grad_data()[0] += (float)acc;
      }
      // note: ops::scale recorded the dx path only when x requires grad at
      // forward time; it uses the captured constant, which equals s here.
    });
  }
  return y;
}

Tensor timestep_features(int t, int dim) {
  FV_CHECK(dim % 2 == 0, "timestep_features: dim must be even, got " << dim);
  Tensor f({dim});
  float* p = f.data();
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const float freq = std::exp(-std::log(10000.0f) * (float)i / (float)half);
    p[i] = std::sin((float)t * freq);
    p[half + i] = std::cos((float)t * freq);
  }
  return f;
}

}  // namespace flowvid
