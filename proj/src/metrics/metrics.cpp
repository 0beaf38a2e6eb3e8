#include "metrics/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "core/check.hpp"
#include "core/ops.hpp"

namespace flowvid {

namespace {
constexpr double kPsnrCap = 99.0;

void check_clip(const Tensor& t, const char* who) {
  FV_CHECK(t.rank() == 4 && t.dim(1) == 3, who << ": want (N,3,H,W), got "
                                               << shape_str(t.shape()));
}
}  // namespace

double psnr(const Tensor& a, const Tensor& b, double peak) {
  check_clip(a, "psnr");
  FV_CHECK(a.shape() == b.shape(), "psnr: shape mismatch " << shape_str(a.shape()) << " vs "
                                                           << shape_str(b.shape()));
  FV_CHECK(peak > 0.0, "psnr: non-positive peak");
  const int N = a.dim(0);
  const size_t per = a.numel() / (size_t)N;
  double acc = 0.0;
  for (int f = 0; f < N; ++f) {
    const float* pa = a.data() + per * f;
    const float* pb = b.data() + per * f;
    double mse = 0.0;
    for (size_t i = 0; i < per; ++i) {
      const double d = (double)pa[i] - pb[i];
      mse += d * d;
    }
    mse /= (double)per;
    acc += mse == 0.0 ? kPsnrCap : std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
  }
  return acc / N;
}

namespace {

std::vector<double> to_luma(const float* frame, int H, int W) {
  std::vector<double> y((size_t)H * W);
  const size_t hw = (size_t)H * W;
  for (size_t i = 0; i < hw; ++i)
    y[i] = 0.299 * frame[i] + 0.587 * frame[hw + i] + 0.114 * frame[2 * hw + i];
  return y;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, double peak) {
  check_clip(a, "ssim");
  FV_CHECK(a.shape() == b.shape(), "ssim: shape mismatch " << shape_str(a.shape()) << " vs "
                                                           << shape_str(b.shape()));
  const int N = a.dim(0), H = a.dim(2), W = a.dim(3);
  const int win = 8, stride = 4;
  FV_CHECK(H >= win && W >= win, "ssim: frame " << H << "x" << W << " smaller than the " << win
                                                << "x" << win << " window");
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const size_t per = a.numel() / (size_t)N;
  double total = 0.0;
  for (int f = 0; f < N; ++f) {
    std::vector<double> ya = to_luma(a.data() + per * f, H, W);
    std::vector<double> yb = to_luma(b.data() + per * f, H, W);
    double acc = 0.0;
    long windows = 0;
    for (int y0 = 0; y0 + win <= H; y0 += stride) {
      for (int x0 = 0; x0 + win <= W; x0 += stride) {
        double ma = 0, mb = 0;
        for (int y = y0; y < y0 + win; ++y)
          for (int x = x0; x < x0 + win; ++x) {
            ma += ya[(size_t)y * W + x];
            mb += yb[(size_t)y * W + x];
          }
        const double n = win * win;
        ma /= n;
        mb /= n;
        double va = 0, vb = 0, cov = 0;
        for (int y = y0; y < y0 + win; ++y)
          for (int x = x0; x < x0 + win; ++x) {
            const double da = ya[(size_t)y * W + x] - ma;
            const double db = yb[(size_t)y * W + x] - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
          }
        va /= n;
        vb /= n;
        cov /= n;
        acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++windows;
      }
    }
    total += acc / (double)windows;
  }
  return total / N;
}

double warp_error(const Tensor& frames, const FlowPair& flow) {
  check_clip(frames, "warp_error");
  flow.validate();
  const int N = frames.dim(0), H = frames.dim(2), W = frames.dim(3);
  FV_CHECK(flow.pairs() == N - 1 && flow.height() == H && flow.width() == W,
           "warp_error: flow " << shape_str(flow.forward.shape()) << " does not cover clip "
                               << shape_str(frames.shape()));
  const size_t per = frames.numel() / (size_t)N;
  const size_t hw = (size_t)H * W;
  double acc = 0.0;
  long count = 0;
  for (int k = 0; k < N - 1; ++k) {
    Tensor next(Shape{3, H, W});
    std::memcpy(next.data(), frames.data() + per * (k + 1), per * sizeof(float));
    Tensor fwd = ops::slice(flow.forward, 0, k, 1).reshaped({2, H, W});
    auto [warped, valid] = backward_warp(next, fwd);
    const float* pw = warped.data();
    const float* pv = valid.data();
    const float* pf = frames.data() + per * k;
    for (size_t p = 0; p < hw; ++p) {
      if (pv[p] <= 0.5f) continue;
      for (int c = 0; c < 3; ++c) {
        const double d = (double)pf[c * hw + p] - pw[c * hw + p];
        acc += d * d;
      }
      count += 3;
    }
  }
  return count ? acc / (double)count : 0.0;
}

double temporal_consistency(const Tensor& frames) {
  check_clip(frames, "temporal_consistency");
  const int N = frames.dim(0);
  FV_CHECK(N >= 2, "temporal_consistency needs at least 2 frames");
  const size_t per = frames.numel() / (size_t)N;
  double acc = 0.0;
  long pairs = 0;
  for (int k = 0; k + 1 < N; ++k) {
    const float* a = frames.data() + per * k;
    const float* b = frames.data() + per * (k + 1);
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < per; ++i) {
      dot += (double)a[i] * b[i];
      na += (double)a[i] * a[i];
      nb += (double)b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
      std::fprintf(stderr, "temporal_consistency: zero-norm frame, skipping pair %d\n", k);
      continue;
    }
    acc += dot / (std::sqrt(na) * std::sqrt(nb));
    ++pairs;
  }
  return pairs ? acc / (double)pairs : 0.0;
}

void EvalReport::finalize() {
  aggregate = ClipScores{};
  aggregate.name = "aggregate";
  if (clips.empty()) return;
  for (const ClipScores& c : clips) {
    FV_CHECK(std::isfinite(c.psnr) && std::isfinite(c.ssim) && std::isfinite(c.e_warp) &&
                 std::isfinite(c.tc),
             "eval: non-finite score for clip " << c.name);
    aggregate.psnr += c.psnr;
    aggregate.ssim += c.ssim;
    aggregate.e_warp += c.e_warp;
    aggregate.tc += c.tc;
  }
  const double n = (double)clips.size();
  aggregate.psnr /= n;
  aggregate.ssim /= n;
  aggregate.e_warp /= n;
  aggregate.tc /= n;
}

void EvalReport::write_csv(const std::string& path) const {
  std::ofstream f(path);
  FV_CHECK(f.good(), "cannot write " << path);
  f << "clip,psnr,ssim,e_warp,tc\n";
  for (const ClipScores& c : clips)
    f << c.name << "," << c.psnr << "," << c.ssim << "," << c.e_warp << "," << c.tc << "\n";
  f << aggregate.name << "," << aggregate.psnr << "," << aggregate.ssim << ","
    << aggregate.e_warp << "," << aggregate.tc << "\n";
}

}  // namespace flowvid
