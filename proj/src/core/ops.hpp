#pragma once

#include <vector>

#include "core/tape.hpp"
#include "core/tensor.hpp"

namespace flowvid {
namespace ops {

// Elementwise, same shape unless noted. All ops record backward closures on
// the tape when recording is on and an input requires grad.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scaled(const Tensor& a, const Tensor& b, float s);  // a + s*b
Tensor neg(const Tensor& a);
Tensor silu(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);  // 2-d
// Batched matmul: a is (B,M,K); b is (B,K,N) or (1,K,N) broadcast over B.
Tensor bmm(const Tensor& a, const Tensor& b);
// x (..., Din) -> (..., Dout); w is (Din, Dout), bias (Dout) optional.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor linear_nobias(const Tensor& x, const Tensor& w);

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
Tensor upsample2x(const Tensor& x);
// Normalizes over the channel axis of (B,C,H,W), per spatial position.
Tensor channel_layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         float eps = 1e-5f);

// out = softmax(q k^T * scale) v. q is (Tq,D) or (B,Tq,D); k/v are
// (Tk,D)/(Tk,Dv) or batched with batch 1 broadcast. Throws on non-finite
// logits.
Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, float scale);

Tensor concat(int axis, const std::vector<Tensor>& parts);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
Tensor transpose(const Tensor& x, int a0, int a1);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse_loss(const Tensor& a, const Tensor& b);
Tensor l1_loss(const Tensor& a, const Tensor& b);

// rows of table (R,D) gathered by index; backward scatter-adds.
Tensor row_gather(const Tensor& table, const std::vector<int>& rows);
// x (B,T,D) + e (T,D) broadcast over B.
Tensor add_rows(const Tensor& x, const Tensor& e);
// x (B,C,H,W) + bias (C) broadcast over B,H,W.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// out[i] = mask[i] > 0.5 ? a[i] : b[i]. Mask broadcasts over the channel
// axis when shaped (B,1,H,W) against (B,C,H,W). Not differentiable; used by
// the sampling paths where bit-exact selection matters.
Tensor select_by_mask(const Tensor& mask, const Tensor& a, const Tensor& b);

}  // namespace ops
}  // namespace flowvid
