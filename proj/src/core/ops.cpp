#include "core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "core/check.hpp"
#include "kernels/kernels.hpp"

namespace flowvid {
namespace ops {

namespace {

const kernels::Kernels& K() { return kernels::active(); }

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  FV_CHECK(a.shape() == b.shape(), op << ": shape mismatch " << shape_str(a.shape())
                                      << " vs " << shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor y(a.shape());
  K().vadd(a.data(), b.data(), y.data(), y.numel());
  check_finite(y, "add");
  if (tape_wants(a, b)) {
    y.set_requires_grad(true);
    Tensor ta = a, tb = b, ty = y;
    Tape::instance().push([ta, tb, ty]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      if (ta.requires_grad()) ta.accumulate_grad(g, ta.numel());
      if (tb.requires_grad()) tb.accumulate_grad(g, tb.numel());
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor y(a.shape());
  K().vsub(a.data(), b.data(), y.data(), y.numel());
  check_finite(y, "sub");
  if (tape_wants(a, b)) {
    y.set_requires_grad(true);
    Tensor ta = a, tb = b, ty = y;
    Tape::instance().push([ta, tb, ty]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      if (ta.requires_grad()) ta.accumulate_grad(g, ta.numel());
      if (tb.requires_grad()) K().vaxpy(-1.0f, g, tb.grad_data(), tb.numel());
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor y(a.shape());
  K().vmul(a.data(), b.data(), y.data(), y.numel());
  check_finite(y, "mul");
  if (tape_wants(a, b)) {
    y.set_requires_grad(true);
    Tensor ta = a, tb = b, ty = y;
    Tape::instance().push([ta, tb, ty]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      size_t n = ta.numel();
      if (ta.requires_grad()) {
        float* ga = ta.grad_data();
        const float* pb = tb.data();
        for (size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
      }
      if (tb.requires_grad()) {
        float* gb = tb.grad_data();
        const float* pa = ta.data();
        for (size_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, float s) {
  Tensor y(a.shape());
  K().vscale(a.data(), s, y.data(), y.numel());
  check_finite(y, "scale");
  if (tape_wants(a)) {
    y.set_requires_grad(true);
    Tensor ta = a, ty = y;
    Tape::instance().push([ta, ty, s]() mutable {
      if (!ty.has_grad()) return;
      K().vaxpy(s, ty.grad_data(), ta.grad_data(), ta.numel());
    });
  }
  return y;
}

Tensor add_scaled(const Tensor& a, const Tensor& b, float s) {
  check_same_shape("add_scaled", a, b);
  Tensor y = a.clone();
  K().vaxpy(s, b.data(), y.data(), y.numel());
  check_finite(y, "add_scaled");
  if (tape_wants(a, b)) {
    y.set_requires_grad(true);
    Tensor ta = a, tb = b, ty = y;
    Tape::instance().push([ta, tb, ty, s]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      if (ta.requires_grad()) ta.accumulate_grad(g, ta.numel());
      if (tb.requires_grad()) K().vaxpy(s, g, tb.grad_data(), tb.numel());
    });
  }
  return y;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0f); }

Tensor silu(const Tensor& x) {
  Tensor y(x.shape());
  const float* px = x.data();
  float* py = y.data();
  size_t n = x.numel();
  for (size_t i = 0; i < n; ++i) {
    float s = 1.0f / (1.0f + std::exp(-px[i]));
    py[i] = px[i] * s;
  }
  check_finite(y, "silu");
  if (tape_wants(x)) {
    y.set_requires_grad(true);
    Tensor tx = x, ty = y;
    Tape::instance().push([tx, ty]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      const float* px2 = tx.data();
      float* gx = tx.grad_data();
      size_t m = tx.numel();
      for (size_t i = 0; i < m; ++i) {
        float s = 1.0f / (1.0f + std::exp(-px2[i]));
        gx[i] += g[i] * s * (1.0f + px2[i] * (1.0f - s));
      }
    });
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  FV_CHECK(a.rank() == 2 && b.rank() == 2,
           "matmul wants rank-2 tensors, got " << shape_str(a.shape()) << " and "
                                               << shape_str(b.shape()));
  FV_CHECK(a.dim(1) == b.dim(0), "matmul: inner dims differ, " << shape_str(a.shape())
                                                               << " x " << shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor y(Shape{m, n});
  K().gemm_nn(a.data(), b.data(), y.data(), m, k, n, false);
  check_finite(y, "matmul");
  if (tape_wants(a, b)) {
    y.set_requires_grad(true);
    Tensor ta = a, tb = b, ty = y;
    Tape::instance().push([ta, tb, ty, m, k, n]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      if (ta.requires_grad()) K().gemm_nt(g, tb.data(), ta.grad_data(), m, n, k, true);
      if (tb.requires_grad()) K().gemm_tn(ta.data(), g, tb.grad_data(), k, m, n, true);
    });
  }
  return y;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  FV_CHECK(a.rank() == 3 && b.rank() == 3,
           "bmm wants rank-3 tensors, got " << shape_str(a.shape()) << " and "
                                            << shape_str(b.shape()));
  const int B = a.dim(0), m = a.dim(1), k = a.dim(2);
  const int Bb = b.dim(0), n = b.dim(2);
  FV_CHECK(b.dim(1) == k && (Bb == B || Bb == 1),
           "bmm: incompatible " << shape_str(a.shape()) << " x " << shape_str(b.shape()));
  Tensor y(Shape{B, m, n});
  const size_t sa = (size_t)m * k, sb = (size_t)k * n, sy = (size_t)m * n;
  for (int i = 0; i < B; ++i)
    K().gemm_nn(a.data() + sa * i, b.data() + sb * (Bb == 1 ? 0 : i), y.data() + sy * i, m, k,
                n, false);
  check_finite(y, "bmm");
  if (tape_wants(a, b)) {
    y.set_requires_grad(true);
    Tensor ta = a, tb = b, ty = y;
    Tape::instance().push([ta, tb, ty, B, Bb, m, k, n, sa, sb, sy]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      if (ta.requires_grad()) {
        float* ga = ta.grad_data();
        for (int i = 0; i < B; ++i)
          K().gemm_nt(g + sy * i, tb.data() + sb * (Bb == 1 ? 0 : i), ga + sa * i, m, n, k, true);
      }
      if (tb.requires_grad()) {
        float* gb = tb.grad_data();
        for (int i = 0; i < B; ++i)
          K().gemm_tn(ta.data() + sa * i, g + sy * i, gb + sb * (Bb == 1 ? 0 : i), k, m, n, true);
      }
    });
  }
  return y;
}

Tensor linear_nobias(const Tensor& x, const Tensor& w) {
  FV_CHECK(w.rank() == 2, "linear: weight must be rank-2, got " << shape_str(w.shape()));
  FV_CHECK(x.dim(-1) == w.dim(0), "linear: input " << shape_str(x.shape()) << " vs weight "
                                                   << shape_str(w.shape()));
  const int din = w.dim(0), dout = w.dim(1);
  const int rows = (int)(x.numel() / (size_t)din);
  Tensor x2 = x.reshaped({rows, din});
  Tensor y2 = matmul(x2, w);
  Shape out = x.shape();
  out.back() = dout;
  return y2.reshaped(out);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  Tensor y = linear_nobias(x, w);
  if (!bias.defined()) return y;
  const int dout = w.dim(1);
  FV_CHECK(bias.rank() == 1 && bias.dim(0) == dout,
           "linear: bias " << shape_str(bias.shape()) << " vs dout " << dout);
  const int rows = (int)(y.numel() / (size_t)dout);
  float* py = y.data();
  const float* pb = bias.data();
  for (int r = 0; r < rows; ++r) K().vadd(py + (size_t)r * dout, pb, py + (size_t)r * dout, dout);
  if (tape_wants(bias)) {
    // y already carries the matmul node; bias gets its own accumulation node.
    y.set_requires_grad(true);
    Tensor tb = bias, ty = y;
    Tape::instance().push([tb, ty, rows, dout]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      float* gb = tb.grad_data();
      for (int r = 0; r < rows; ++r) K().vadd(gb, g + (size_t)r * dout, gb, dout);
    });
  }
  return y;
}

namespace {

// col is (Cin*kh*kw, Ho*Wo) for one image.
void im2col(const float* x, int cin, int h, int w, int kh, int kw, int stride, int pad, int ho,
            int wo, float* col) {
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        float* dst = col + (size_t)((c * kh + ky) * kw + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::memset(dst + (size_t)oy * wo, 0, sizeof(float) * wo);
            continue;
          }
          const float* src = x + ((size_t)c * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[(size_t)oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_acc(const float* col, int cin, int h, int w, int kh, int kw, int stride, int pad,
                int ho, int wo, float* gx) {
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const float* src = col + (size_t)((c * kh + ky) * kw + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          float* dst = gx + ((size_t)c * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[(size_t)oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  FV_CHECK(x.rank() == 4 && w.rank() == 4,
           "conv2d wants (B,C,H,W) x and (Co,Ci,kh,kw) w, got " << shape_str(x.shape()) << " and "
                                                                << shape_str(w.shape()));
  const int B = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  FV_CHECK(w.dim(1) == cin, "conv2d: channels differ, input " << shape_str(x.shape())
                                                              << " vs weight " << shape_str(w.shape()));
  FV_CHECK(stride >= 1, "conv2d: bad stride " << stride);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  FV_CHECK(ho > 0 && wo > 0, "conv2d: empty output for input " << shape_str(x.shape()));
  const int ckk = cin * kh * kw;
  Tensor y(Shape{B, cout, ho, wo});
  std::vector<float> col((size_t)ckk * ho * wo);
  const size_t xstride = (size_t)cin * h * wd, ystride = (size_t)cout * ho * wo;
  for (int b = 0; b < B; ++b) {
    im2col(x.data() + xstride * b, cin, h, wd, kh, kw, stride, pad, ho, wo, col.data());
    K().gemm_nn(w.data(), col.data(), y.data() + ystride * b, cout, ckk, ho * wo, false);
    if (bias.defined()) {
      float* py = y.data() + ystride * b;
      for (int co = 0; co < cout; ++co) {
        const float bv = bias.data()[co];
        float* row = py + (size_t)co * ho * wo;
        for (int i = 0; i < ho * wo; ++i) row[i] += bv;
      }
    }
  }
  check_finite(y, "conv2d");
  if (tape_wants(x, w, bias.defined() ? bias : x)) {
    y.set_requires_grad(true);
    Tensor tx = x, tw = w, tb = bias, ty = y;
    Tape::instance().push([tx, tw, tb, ty, B, cin, h, wd, cout, kh, kw, stride, pad, ho, wo, ckk,
                           xstride, ystride]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      std::vector<float> col2((size_t)ckk * ho * wo);
      std::vector<float> dcol((size_t)ckk * ho * wo);
      for (int b = 0; b < B; ++b) {
        const float* gb = g + ystride * b;
        if (tw.requires_grad()) {
          im2col(tx.data() + xstride * b, cin, h, wd, kh, kw, stride, pad, ho, wo, col2.data());
          K().gemm_nt(gb, col2.data(), tw.grad_data(), cout, ho * wo, ckk, true);
        }
        if (tx.requires_grad()) {
          K().gemm_tn(tw.data(), gb, dcol.data(), ckk, cout, ho * wo, false);
          col2im_acc(dcol.data(), cin, h, wd, kh, kw, stride, pad, ho, wo,
                     tx.grad_data() + xstride * b);
        }
        if (tb.defined() && tb.requires_grad()) {
          float* gbias = tb.grad_data();
          for (int co = 0; co < cout; ++co)
            gbias[co] += (float)K().vsum(gb + (size_t)co * ho * wo, (size_t)ho * wo);
        }
      }
    });
  }
  return y;
}

Tensor upsample2x(const Tensor& x) {
  FV_CHECK(x.rank() == 4, "upsample2x wants (B,C,H,W), got " << shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y(Shape{B, C, 2 * H, 2 * W});
  const float* px = x.data();
  float* py = y.data();
  for (int bc = 0; bc < B * C; ++bc) {
    const float* src = px + (size_t)bc * H * W;
    float* dst = py + (size_t)bc * 4 * H * W;
    for (int yrow = 0; yrow < H; ++yrow) {
      float* d0 = dst + (size_t)(2 * yrow) * 2 * W;
      float* d1 = d0 + 2 * W;
      const float* s = src + (size_t)yrow * W;
      for (int xcol = 0; xcol < W; ++xcol) {
        d0[2 * xcol] = d0[2 * xcol + 1] = s[xcol];
        d1[2 * xcol] = d1[2 * xcol + 1] = s[xcol];
      }
    }
  }
  if (tape_wants(x)) {
    y.set_requires_grad(true);
    Tensor tx = x, ty = y;
    Tape::instance().push([tx, ty, B, C, H, W]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      float* gx = tx.grad_data();
      for (int bc = 0; bc < B * C; ++bc) {
        float* dst = gx + (size_t)bc * H * W;
        const float* src = g + (size_t)bc * 4 * H * W;
        for (int yrow = 0; yrow < H; ++yrow) {
          const float* s0 = src + (size_t)(2 * yrow) * 2 * W;
          const float* s1 = s0 + 2 * W;
          float* d = dst + (size_t)yrow * W;
          for (int xcol = 0; xcol < W; ++xcol)
            d[xcol] += s0[2 * xcol] + s0[2 * xcol + 1] + s1[2 * xcol] + s1[2 * xcol + 1];
        }
      }
    });
  }
  return y;
}

Tensor channel_layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  FV_CHECK(x.rank() == 4, "channel_layernorm wants (B,C,H,W), got " << shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  FV_CHECK(gain.numel() == (size_t)C && bias.numel() == (size_t)C,
           "channel_layernorm: gain/bias " << shape_str(gain.shape()) << "/"
                                           << shape_str(bias.shape()) << " vs C=" << C);
  Tensor y(x.shape());
  const float* px = x.data();
  const float* pg = gain.data();
  const float* pb = bias.data();
  float* py = y.data();
  for (int b = 0; b < B; ++b) {
    const float* xb = px + (size_t)b * C * HW;
    float* yb = py + (size_t)b * C * HW;
    for (int p = 0; p < HW; ++p) {
      double mu = 0.0, m2 = 0.0;
      for (int c = 0; c < C; ++c) mu += xb[(size_t)c * HW + p];
      mu /= C;
      for (int c = 0; c < C; ++c) {
        double d = xb[(size_t)c * HW + p] - mu;
        m2 += d * d;
      }
      const float inv = 1.0f / std::sqrt((float)(m2 / C) + eps);
      for (int c = 0; c < C; ++c) {
        float xh = (xb[(size_t)c * HW + p] - (float)mu) * inv;
        yb[(size_t)c * HW + p] = pg[c] * xh + pb[c];
      }
    }
  }
  check_finite(y, "channel_layernorm");
  if (tape_wants(x, gain, bias)) {
    y.set_requires_grad(true);
    Tensor tx = x, tg = gain, tb = bias, ty = y;
    Tape::instance().push([tx, tg, tb, ty, B, C, HW, eps]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      const float* px2 = tx.data();
      const float* pg2 = tg.data();
      float* gx = tx.requires_grad() ? tx.grad_data() : nullptr;
      float* gg = tg.requires_grad() ? tg.grad_data() : nullptr;
      float* gb = tb.requires_grad() ? tb.grad_data() : nullptr;
      std::vector<float> xh(C), dxh(C);
      for (int b = 0; b < B; ++b) {
        const float* xb = px2 + (size_t)b * C * HW;
        const float* gyb = g + (size_t)b * C * HW;
        for (int p = 0; p < HW; ++p) {
          double mu = 0.0, m2 = 0.0;
          for (int c = 0; c < C; ++c) mu += xb[(size_t)c * HW + p];
          mu /= C;
          for (int c = 0; c < C; ++c) {
            double d = xb[(size_t)c * HW + p] - mu;
            m2 += d * d;
          }
          const float inv = 1.0f / std::sqrt((float)(m2 / C) + eps);
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (int c = 0; c < C; ++c) {
            xh[c] = (xb[(size_t)c * HW + p] - (float)mu) * inv;
            dxh[c] = gyb[(size_t)c * HW + p] * pg2[c];
            mean_dxh += dxh[c];
            mean_dxh_xh += (double)dxh[c] * xh[c];
          }
          mean_dxh /= C;
          mean_dxh_xh /= C;
          for (int c = 0; c < C; ++c) {
            if (gx)
              gx[(size_t)b * C * HW + (size_t)c * HW + p] +=
                  inv * (dxh[c] - (float)mean_dxh - xh[c] * (float)mean_dxh_xh);
            if (gg) gg[c] += gyb[(size_t)c * HW + p] * xh[c];
            if (gb) gb[c] += gyb[(size_t)c * HW + p];
          }
        }
      }
    });
  }
  return y;
}

namespace {

// Shared by forward and backward: logits -> probabilities in place.
void softmax_rows_inplace(float* s, int rows, int cols, const char* where) {
  for (int r = 0; r < rows; ++r) {
    float* row = s + (size_t)r * cols;
    const float mx = K().vmax(row, cols);
    FV_CHECK(std::isfinite(mx), where << ": non-finite attention logits");
    double denom = 0.0;
    for (int c = 0; c < cols; ++c) {
      FV_CHECK(std::isfinite(row[c]), where << ": non-finite attention logits");
      row[c] = std::exp(row[c] - mx);
      denom += row[c];
    }
    FV_CHECK(std::isfinite(denom) && denom > 0.0, where << ": non-finite attention logits");
    const float inv = (float)(1.0 / denom);
    K().vscale(row, inv, row, cols);
  }
}

}  // namespace

Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, float scale) {
  const bool batched = q.rank() == 3;
  FV_CHECK(q.rank() == 2 || q.rank() == 3,
           "softmax_attention: q must be rank 2 or 3, got " << shape_str(q.shape()));
  FV_CHECK(k.rank() == q.rank() && v.rank() == q.rank(),
           "softmax_attention: rank mismatch q=" << shape_str(q.shape())
                                                 << " k=" << shape_str(k.shape())
                                                 << " v=" << shape_str(v.shape()));
  const int B = batched ? q.dim(0) : 1;
  const int Bk = batched ? k.dim(0) : 1;
  const int Tq = q.dim(batched ? 1 : 0), D = q.dim(batched ? 2 : 1);
  const int Tk = k.dim(batched ? 1 : 0), Dv = v.dim(batched ? 2 : 1);
  FV_CHECK(k.dim(batched ? 2 : 1) == D, "softmax_attention: q/k channel mismatch "
                                            << shape_str(q.shape()) << " vs "
                                            << shape_str(k.shape()));
  FV_CHECK(v.dim(batched ? 1 : 0) == Tk, "softmax_attention: k/v token mismatch "
                                             << shape_str(k.shape()) << " vs "
                                             << shape_str(v.shape()));
  FV_CHECK(!batched || v.dim(0) == Bk, "softmax_attention: k/v batch mismatch");
  FV_CHECK(Bk == B || Bk == 1, "softmax_attention: batch mismatch q=" << shape_str(q.shape())
                                                                      << " k=" << shape_str(k.shape()));
  Shape yshape = batched ? Shape{B, Tq, Dv} : Shape{Tq, Dv};
  Tensor y(yshape);
  const size_t sq = (size_t)Tq * D, sk = (size_t)Tk * D, sv = (size_t)Tk * Dv,
               sy = (size_t)Tq * Dv;
  std::vector<float> probs((size_t)Tq * Tk);
  for (int b = 0; b < B; ++b) {
    const float* qb = q.data() + sq * b;
    const float* kb = k.data() + sk * (Bk == 1 ? 0 : b);
    const float* vb = v.data() + sv * (Bk == 1 ? 0 : b);
    K().gemm_nt(qb, kb, probs.data(), Tq, D, Tk, false);
    K().vscale(probs.data(), scale, probs.data(), probs.size());
    softmax_rows_inplace(probs.data(), Tq, Tk, "softmax_attention");
    K().gemm_nn(probs.data(), vb, y.data() + sy * b, Tq, Tk, Dv, false);
  }
  check_finite(y, "softmax_attention");
  if (tape_wants(q, k, v)) {
    y.set_requires_grad(true);
    Tensor tq = q, tk = k, tv = v, ty = y;
    Tape::instance().push([tq, tk, tv, ty, B, Bk, Tq, Tk, D, Dv, sq, sk, sv, sy, scale]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      std::vector<float> p((size_t)Tq * Tk), dp((size_t)Tq * Tk);
      for (int b = 0; b < B; ++b) {
        const float* qb = tq.data() + sq * b;
        const float* kb = tk.data() + sk * (Bk == 1 ? 0 : b);
        const float* vb = tv.data() + sv * (Bk == 1 ? 0 : b);
        const float* gy = g + sy * b;
        // recompute probabilities rather than holding them across the step
        K().gemm_nt(qb, kb, p.data(), Tq, D, Tk, false);
        K().vscale(p.data(), scale, p.data(), p.size());
        softmax_rows_inplace(p.data(), Tq, Tk, "softmax_attention.backward");
        if (tv.requires_grad())
          K().gemm_tn(p.data(), gy, tv.grad_data() + sv * (Bk == 1 ? 0 : b), Tk, Tq, Dv, true);
        if (tq.requires_grad() || tk.requires_grad()) {
          K().gemm_nt(gy, vb, dp.data(), Tq, Dv, Tk, false);
          for (int r = 0; r < Tq; ++r) {
            float* dpr = dp.data() + (size_t)r * Tk;
            const float* pr = p.data() + (size_t)r * Tk;
            const float rowdot = (float)K().vdot(dpr, pr, Tk);
            for (int c = 0; c < Tk; ++c) dpr[c] = (dpr[c] - rowdot) * pr[c] * scale;
          }
          if (tq.requires_grad())
            K().gemm_nn(dp.data(), kb, tq.grad_data() + sq * b, Tq, Tk, D, true);
          if (tk.requires_grad())
            K().gemm_tn(dp.data(), qb, tk.grad_data() + sk * (Bk == 1 ? 0 : b), Tk, Tq, D, true);
        }
      }
    });
  }
  return y;
}

namespace {

void axis_extents(const Tensor& x, int axis, size_t& outer, size_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= (size_t)x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= (size_t)x.dim(i);
}

}  // namespace

Tensor concat(int axis, const std::vector<Tensor>& parts) {
  FV_CHECK(!parts.empty(), "concat of zero tensors");
  const Tensor& first = parts[0];
  FV_CHECK(axis >= 0 && axis < first.rank(), "concat axis " << axis << " out of rank "
                                                            << first.rank());
  int total = 0;
  for (const Tensor& p : parts) {
    FV_CHECK(p.rank() == first.rank(), "concat: rank mismatch " << shape_str(p.shape()) << " vs "
                                                                << shape_str(first.shape()));
    for (int i = 0; i < first.rank(); ++i)
      if (i != axis)
        FV_CHECK(p.dim(i) == first.dim(i), "concat: shape mismatch " << shape_str(p.shape())
                                                                     << " vs "
                                                                     << shape_str(first.shape()));
    total += p.dim(axis);
  }
  Shape out = first.shape();
  out[axis] = total;
  Tensor y(out);
  size_t outer, inner_unused;
  axis_extents(first, axis, outer, inner_unused);
  size_t inner = inner_unused;
  const size_t ostride = (size_t)total * inner;
  size_t off = 0;
  bool wants = false;
  for (const Tensor& p : parts) wants = wants || p.requires_grad();
  wants = wants && Tape::instance().recording();
  for (const Tensor& p : parts) {
    const size_t block = (size_t)p.dim(axis) * inner;
    for (size_t o = 0; o < outer; ++o)
      std::memcpy(y.data() + o * ostride + off, p.data() + o * block, block * sizeof(float));
    off += block;
  }
  if (wants) {
    y.set_requires_grad(true);
    std::vector<Tensor> tp = parts;
    Tensor ty = y;
    Tape::instance().push([tp, ty, outer, inner, ostride]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      size_t off2 = 0;
      for (Tensor& p : tp) {
        const size_t block = p.numel() / outer;
        if (p.requires_grad()) {
          float* gp = p.grad_data();
          for (size_t o = 0; o < outer; ++o)
            K().vadd(gp + o * block, g + o * ostride + off2, gp + o * block, block);
        }
        off2 += block;
      }
    });
  }
  return y;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
  FV_CHECK(axis >= 0 && axis < x.rank(), "slice axis " << axis << " out of rank " << x.rank());
  FV_CHECK(start >= 0 && len > 0 && start + len <= x.dim(axis),
           "slice [" << start << "," << start + len << ") out of dim " << x.dim(axis)
                     << " in shape " << shape_str(x.shape()));
  Shape out = x.shape();
  out[axis] = len;
  Tensor y(out);
  size_t outer, inner;
  axis_extents(x, axis, outer, inner);
  const size_t xstride = (size_t)x.dim(axis) * inner;
  const size_t ystride = (size_t)len * inner;
  for (size_t o = 0; o < outer; ++o)
    std::memcpy(y.data() + o * ystride, x.data() + o * xstride + (size_t)start * inner,
                ystride * sizeof(float));
  if (tape_wants(x)) {
    y.set_requires_grad(true);
    Tensor tx = x, ty = y;
    Tape::instance().push([tx, ty, outer, inner, xstride, ystride, start]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      float* gx = tx.grad_data();
      for (size_t o = 0; o < outer; ++o)
        K().vadd(gx + o * xstride + (size_t)start * inner, g + o * ystride,
                 gx + o * xstride + (size_t)start * inner, ystride);
    });
  }
  return y;
}

namespace {

void permute_copy(const float* src, float* dst, const Shape& in_shape,
                  const std::vector<int>& axes) {
  const int r = (int)in_shape.size();
  std::vector<size_t> in_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * (size_t)in_shape[i + 1];
  // strides of the source walked in output order
  std::vector<size_t> walk(r);
  std::vector<int> out_shape(r);
  for (int i = 0; i < r; ++i) {
    walk[i] = in_strides[axes[i]];
    out_shape[i] = in_shape[axes[i]];
  }
  std::vector<int> idx(r, 0);
  size_t src_off = 0;
  size_t total = 1;
  for (int d : out_shape) total *= (size_t)d;
  for (size_t o = 0; o < total; ++o) {
    dst[o] = src[src_off];
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[i]) {
        src_off += walk[i];
        break;
      }
      idx[i] = 0;
      src_off -= walk[i] * (size_t)(out_shape[i] - 1);
    }
  }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  FV_CHECK((int)axes.size() == x.rank(), "permute axes size " << axes.size() << " vs rank "
                                                              << x.rank());
  std::vector<bool> seen(x.rank(), false);
  Shape out(x.rank());
  for (int i = 0; i < x.rank(); ++i) {
    FV_CHECK(axes[i] >= 0 && axes[i] < x.rank() && !seen[axes[i]], "permute: bad axes");
    seen[axes[i]] = true;
    out[i] = x.dim(axes[i]);
  }
  Tensor y(out);
  permute_copy(x.data(), y.data(), x.shape(), axes);
  if (tape_wants(x)) {
    y.set_requires_grad(true);
    std::vector<int> inv(x.rank());
    for (int i = 0; i < x.rank(); ++i) inv[axes[i]] = i;
    Tensor tx = x, ty = y;
    Shape yshape = out;
    Tape::instance().push([tx, ty, inv, yshape]() mutable {
      if (!ty.has_grad()) return;
      Tensor tmp(tx.shape());
      permute_copy(ty.grad_data(), tmp.data(), yshape, inv);
      tx.accumulate_grad(tmp.data(), tmp.numel());
    });
  }
  return y;
}

Tensor transpose(const Tensor& x, int a0, int a1) {
  std::vector<int> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  FV_CHECK(a0 >= 0 && a0 < x.rank() && a1 >= 0 && a1 < x.rank(),
           "transpose axes " << a0 << "," << a1 << " out of rank " << x.rank());
  std::swap(axes[a0], axes[a1]);
  return permute(x, axes);
}

Tensor sum(const Tensor& x) {
  Tensor y = Tensor::scalar((float)K().vsum(x.data(), x.numel()));
  if (tape_wants(x)) {
    y.set_requires_grad(true);
    Tensor tx = x, ty = y;
    Tape::instance().push([tx, ty]() mutable {
      if (!ty.has_grad()) return;
      const float g = ty.grad_data()[0];
      float* gx = tx.grad_data();
      for (size_t i = 0; i < tx.numel(); ++i) gx[i] += g;
    });
  }
  return y;
}

Tensor mean(const Tensor& x) {
  const float invn = 1.0f / (float)x.numel();
  Tensor y = Tensor::scalar((float)K().vsum(x.data(), x.numel()) * invn);
  if (tape_wants(x)) {
    y.set_requires_grad(true);
    Tensor tx = x, ty = y;
    Tape::instance().push([tx, ty, invn]() mutable {
      if (!ty.has_grad()) return;
      const float g = ty.grad_data()[0] * invn;
      float* gx = tx.grad_data();
      for (size_t i = 0; i < tx.numel(); ++i) gx[i] += g;
    });
  }
  return y;
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  check_same_shape("mse_loss", a, b);
  const size_t n = a.numel();
  std::vector<float> d(n);
  K().vsub(a.data(), b.data(), d.data(), n);
  Tensor y = Tensor::scalar((float)(K().vsumsq(d.data(), n) / (double)n));
  check_finite(y, "mse_loss");
  if (tape_wants(a, b)) {
    y.set_requires_grad(true);
    Tensor ta = a, tb = b, ty = y;
    Tape::instance().push([ta, tb, ty, n]() mutable {
      if (!ty.has_grad()) return;
      const float g = ty.grad_data()[0] * 2.0f / (float)n;
      std::vector<float> d2(n);
      K().vsub(ta.data(), tb.data(), d2.data(), n);
      if (ta.requires_grad()) K().vaxpy(g, d2.data(), ta.grad_data(), n);
      if (tb.requires_grad()) K().vaxpy(-g, d2.data(), tb.grad_data(), n);
    });
  }
  return y;
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  check_same_shape("l1_loss", a, b);
  const size_t n = a.numel();
  std::vector<float> d(n);
  K().vsub(a.data(), b.data(), d.data(), n);
  Tensor y = Tensor::scalar((float)(K().vsumabs(d.data(), n) / (double)n));
  check_finite(y, "l1_loss");
  if (tape_wants(a, b)) {
    y.set_requires_grad(true);
    Tensor ta = a, tb = b, ty = y;
    Tape::instance().push([ta, tb, ty, n]() mutable {
      if (!ty.has_grad()) return;
      const float g = ty.grad_data()[0] / (float)n;
      const float* pa = ta.data();
      const float* pb = tb.data();
      float* ga = ta.requires_grad() ? ta.grad_data() : nullptr;
      float* gb = tb.requires_grad() ? tb.grad_data() : nullptr;
      for (size_t i = 0; i < n; ++i) {
        const float diff = pa[i] - pb[i];
        const float s = diff > 0.0f ? g : (diff < 0.0f ? -g : 0.0f);
        if (ga) ga[i] += s;
        if (gb) gb[i] -= s;
      }
    });
  }
  return y;
}

Tensor row_gather(const Tensor& table, const std::vector<int>& rows) {
  FV_CHECK(table.rank() == 2, "row_gather wants a rank-2 table, got " << shape_str(table.shape()));
  const int R = table.dim(0), D = table.dim(1);
  Tensor y(Shape{(int)rows.size(), D});
  for (size_t i = 0; i < rows.size(); ++i) {
    FV_CHECK(rows[i] >= 0 && rows[i] < R, "row_gather: row " << rows[i] << " out of " << R);
    std::memcpy(y.data() + i * (size_t)D, table.data() + (size_t)rows[i] * D,
                sizeof(float) * D);
  }
  if (tape_wants(table)) {
    y.set_requires_grad(true);
    Tensor tt = table, ty = y;
    std::vector<int> r2 = rows;
    Tape::instance().push([tt, ty, r2, D]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      float* gt = tt.grad_data();
      for (size_t i = 0; i < r2.size(); ++i)
        K().vadd(gt + (size_t)r2[i] * D, g + i * (size_t)D, gt + (size_t)r2[i] * D, D);
    });
  }
  return y;
}

Tensor add_rows(const Tensor& x, const Tensor& e) {
  FV_CHECK(x.rank() == 3 && e.rank() == 2 && x.dim(1) == e.dim(0) && x.dim(2) == e.dim(1),
           "add_rows: " << shape_str(x.shape()) << " + " << shape_str(e.shape()));
  const int B = x.dim(0);
  const size_t block = e.numel();
  Tensor y(x.shape());
  for (int b = 0; b < B; ++b)
    K().vadd(x.data() + block * b, e.data(), y.data() + block * b, block);
  if (tape_wants(x, e)) {
    y.set_requires_grad(true);
    Tensor tx = x, te = e, ty = y;
    Tape::instance().push([tx, te, ty, B, block]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      if (tx.requires_grad()) tx.accumulate_grad(g, tx.numel());
      if (te.requires_grad()) {
        float* ge = te.grad_data();
        for (int b = 0; b < B; ++b) K().vadd(ge, g + block * b, ge, block);
      }
    });
  }
  return y;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  FV_CHECK(x.rank() == 4 && bias.rank() == 1 && bias.dim(0) == x.dim(1),
           "add_channel_bias: " << shape_str(x.shape()) << " + " << shape_str(bias.shape()));
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor y(x.shape());
  const float* px = x.data();
  const float* pb = bias.data();
  float* py = y.data();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const size_t off = ((size_t)b * C + c) * HW;
      const float bv = pb[c];
      for (int i = 0; i < HW; ++i) py[off + i] = px[off + i] + bv;
    }
  if (tape_wants(x, bias)) {
    y.set_requires_grad(true);
    Tensor tx = x, tb = bias, ty = y;
    Tape::instance().push([tx, tb, ty, B, C, HW]() mutable {
      if (!ty.has_grad()) return;
      const float* g = ty.grad_data();
      if (tx.requires_grad()) tx.accumulate_grad(g, tx.numel());
      if (tb.requires_grad()) {
        float* gb = tb.grad_data();
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c)
            gb[c] += (float)K().vsum(g + ((size_t)b * C + c) * HW, HW);
      }
    });
  }
  return y;
}

Tensor select_by_mask(const Tensor& mask, const Tensor& a, const Tensor& b) {
  check_same_shape("select_by_mask", a, b);
  const float* pa = a.data();
  const float* pb = b.data();
  const float* pm = mask.data();
  Tensor y(a.shape());
  float* py = y.data();
  if (mask.shape() == a.shape()) {
    for (size_t i = 0; i < a.numel(); ++i) py[i] = pm[i] > 0.5f ? pa[i] : pb[i];
    return y;
  }
  FV_CHECK(mask.rank() == 4 && a.rank() == 4 && mask.dim(1) == 1 && mask.dim(0) == a.dim(0) &&
               mask.dim(2) == a.dim(2) && mask.dim(3) == a.dim(3),
           "select_by_mask: mask " << shape_str(mask.shape()) << " vs data "
                                   << shape_str(a.shape()));
  const int B = a.dim(0), C = a.dim(1);
  const size_t HW = (size_t)a.dim(2) * a.dim(3);
  for (int bi = 0; bi < B; ++bi) {
    const float* m = pm + (size_t)bi * HW;
    for (int c = 0; c < C; ++c) {
      const size_t off = ((size_t)bi * C + c) * HW;
      for (size_t i = 0; i < HW; ++i) py[off + i] = m[i] > 0.5f ? pa[off + i] : pb[off + i];
    }
  }
  return y;
}

}  // namespace ops
}  // namespace flowvid
