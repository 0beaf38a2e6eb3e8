#include "flow/flow_field.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "core/check.hpp"
#include "core/ops.hpp"

namespace flowvid {

void FlowPair::validate() const {
  FV_CHECK(forward.defined() && backward.defined(), "flow pair with undefined planes");
  FV_CHECK(forward.rank() == 4 && forward.dim(1) == 2,
           "flow plane must be (P,2,H,W), got " << shape_str(forward.shape()));
  FV_CHECK(forward.shape() == backward.shape(), "flow planes disagree: "
                                                    << shape_str(forward.shape()) << " vs "
                                                    << shape_str(backward.shape()));
}

CorruptedFlow estimate_corrupted_flow(const FlowPair& source, const Tensor& masks) {
  source.validate();
  FV_CHECK(masks.rank() == 4 && masks.dim(1) == 1,
           "masks must be (N,1,H,W), got " << shape_str(masks.shape()));
  const int N = masks.dim(0);
  FV_CHECK(N >= 2, "flow estimation needs at least 2 frames, got " << N);
  const int P = N - 1, H = masks.dim(2), W = masks.dim(3);
  FV_CHECK(source.pairs() == P && source.height() == H && source.width() == W,
           "flow " << shape_str(source.forward.shape()) << " does not cover " << N << " frames of "
                   << H << "x" << W);
  CorruptedFlow out;
  out.flow.forward = source.forward.clone();
  out.flow.backward = source.backward.clone();
  out.holes = Tensor(Shape{P, 1, H, W});
  const size_t hw = (size_t)H * W;
  const float* m = masks.data();
  float* hole = out.holes.data();
  float* fw = out.flow.forward.data();
  float* bw = out.flow.backward.data();
  for (int k = 0; k < P; ++k) {
    const float* m0 = m + (size_t)k * hw;
    const float* m1 = m + (size_t)(k + 1) * hw;
    float* hk = hole + (size_t)k * hw;
    float* fk = fw + (size_t)k * 2 * hw;
    float* bk = bw + (size_t)k * 2 * hw;
    for (size_t i = 0; i < hw; ++i) {
      const bool in_hole = m0[i] < 0.5f || m1[i] < 0.5f;
      hk[i] = in_hole ? 1.0f : 0.0f;
      if (in_hole) {
        fk[i] = fk[i + hw] = 0.0f;
        bk[i] = bk[i + hw] = 0.0f;
      }
    }
  }
  return out;
}

std::pair<Tensor, Tensor> backward_warp(const Tensor& x, const Tensor& flow) {
  FV_CHECK(x.rank() == 3, "backward_warp wants (C,H,W), got " << shape_str(x.shape()));
  FV_CHECK(flow.rank() == 3 && flow.dim(0) == 2 && flow.dim(1) == x.dim(1) &&
               flow.dim(2) == x.dim(2),
           "backward_warp: flow " << shape_str(flow.shape()) << " vs image "
                                  << shape_str(x.shape()));
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor out(x.shape());
  Tensor validity(Shape{1, H, W});
  const float* px = x.data();
  const float* fx = flow.data();
  const float* fy = flow.data() + (size_t)H * W;
  float* po = out.data();
  float* pv = validity.data();
  const size_t hw = (size_t)H * W;
  for (int y = 0; y < H; ++y) {
    for (int xc = 0; xc < W; ++xc) {
      const size_t p = (size_t)y * W + xc;
      const float sx = (float)xc + fx[p];
      const float sy = (float)y + fy[p];
      if (sx < 0.0f || sx > (float)(W - 1) || sy < 0.0f || sy > (float)(H - 1)) {
        pv[p] = 0.0f;
        for (int c = 0; c < C; ++c) po[c * hw + p] = px[c * hw + p];
        continue;
      }
      pv[p] = 1.0f;
      const int x0 = (int)sx, y0 = (int)sy;
      const float wx = sx - (float)x0;
      const float wy = sy - (float)y0;
      if (wx == 0.0f && wy == 0.0f) {
        // integer displacement: plain copy, keeps exactness guarantees
        const size_t q = (size_t)y0 * W + x0;
        for (int c = 0; c < C; ++c) po[c * hw + p] = px[c * hw + q];
        continue;
      }
      const int x1 = x0 + 1 < W ? x0 + 1 : x0;
      const int y1 = y0 + 1 < H ? y0 + 1 : y0;
      for (int c = 0; c < C; ++c) {
        const float* ch = px + (size_t)c * hw;
        const float v00 = ch[(size_t)y0 * W + x0];
        const float v01 = ch[(size_t)y0 * W + x1];
        const float v10 = ch[(size_t)y1 * W + x0];
        const float v11 = ch[(size_t)y1 * W + x1];
        po[c * hw + p] =
            (1.0f - wy) * ((1.0f - wx) * v00 + wx * v01) + wy * ((1.0f - wx) * v10 + wx * v11);
      }
    }
  }
  return {out, validity};
}

Tensor forward_backward_consistency(const FlowPair& flow) {
  flow.validate();
  const int P = flow.pairs(), H = flow.height(), W = flow.width();
  Tensor out(Shape{P, 1, H, W});
  const size_t hw = (size_t)H * W;
  for (int k = 0; k < P; ++k) {
    Tensor fwd_k = ops::slice(flow.forward, 0, k, 1).reshaped({2, H, W});
    Tensor bwd_k = ops::slice(flow.backward, 0, k, 1).reshaped({2, H, W});
    auto [bwd_at_dest, valid] = backward_warp(bwd_k, fwd_k);
    const float* f = fwd_k.data();
    const float* b = bwd_at_dest.data();
    float* o = out.data() + (size_t)k * hw;
    for (size_t i = 0; i < hw; ++i) {
      const float ex = f[i] + b[i];
      const float ey = f[i + hw] + b[i + hw];
      o[i] = std::exp(-(ex * ex + ey * ey));
    }
  }
  return out;
}

Tensor flow_loss(const CompletedFlow& pred, const FlowPair& gt) {
  gt.validate();
  FV_CHECK(pred.flow.forward.shape() == gt.forward.shape(),
           "flow_loss: shape mismatch " << shape_str(pred.flow.forward.shape()) << " vs "
                                        << shape_str(gt.forward.shape()));
  Tensor lf = ops::l1_loss(pred.flow.forward, gt.forward);
  Tensor lb = ops::l1_loss(pred.flow.backward, gt.backward);
  return ops::scale(ops::add(lf, lb), 0.5f);
}

Tensor combined_loss(const Tensor& diff, const Tensor& flow, float lambda) {
  FV_CHECK(lambda >= 0.0f, "combined_loss: negative lambda " << lambda);
  return ops::add_scaled(diff, flow, lambda);
}

namespace {
struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;
}  // namespace

void write_flo2(const std::string& path, const FlowPair& flow) {
  flow.validate();
  FilePtr f(std::fopen(path.c_str(), "wb"));
  FV_CHECK(f, "cannot open for write: " << path);
  const char magic[4] = {'F', 'L', 'O', '2'};
  std::fwrite(magic, 1, 4, f.get());
  uint32_t dims[3] = {(uint32_t)flow.pairs(), (uint32_t)flow.height(), (uint32_t)flow.width()};
  std::fwrite(dims, 4, 3, f.get());
  const size_t n = flow.forward.numel();
  FV_CHECK(std::fwrite(flow.forward.data(), 4, n, f.get()) == n, "short write: " << path);
  FV_CHECK(std::fwrite(flow.backward.data(), 4, n, f.get()) == n, "short write: " << path);
}

FlowPair read_flo2(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  FV_CHECK(f, "cannot open: " << path);
  char magic[4];
  FV_CHECK(std::fread(magic, 1, 4, f.get()) == 4 && std::memcmp(magic, "FLO2", 4) == 0,
           "bad magic in " << path << " (expected FLO2)");
  uint32_t dims[3];
  FV_CHECK(std::fread(dims, 4, 3, f.get()) == 3 && dims[0] > 0 && dims[1] > 0 && dims[2] > 0,
           "bad header in " << path);
  FlowPair flow;
  flow.forward = Tensor(Shape{(int)dims[0], 2, (int)dims[1], (int)dims[2]});
  flow.backward = Tensor(Shape{(int)dims[0], 2, (int)dims[1], (int)dims[2]});
  const size_t n = flow.forward.numel();
  FV_CHECK(std::fread(flow.forward.data(), 4, n, f.get()) == n, "short read: " << path);
  FV_CHECK(std::fread(flow.backward.data(), 4, n, f.get()) == n, "short read: " << path);
  return flow;
}

}  // namespace flowvid
