#pragma once

#include <string>
#include <vector>

#include "core/tensor.hpp"
#include "flow/flow_field.hpp"

namespace flowvid {

// Quality metrics over (N,3,H,W) clips in [0,1]. Per-frame metrics are
// averaged over frames; exact matches report the 99 dB cap.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Grayscale SSIM (luma 0.299/0.587/0.114), 8x8 windows, stride 4,
// C1=(0.01 peak)^2, C2=(0.03 peak)^2. Throws when a frame is smaller than
// the window.
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

// Mean squared difference between frame i and frame i+1 warped back with the
// forward flow, over valid pixels and all pairs.
double warp_error(const Tensor& frames, const FlowPair& flow);

// Mean cosine similarity between consecutive flattened frames. Zero-norm
// frames skip their pair with a warning on stderr.
double temporal_consistency(const Tensor& frames);

struct ClipScores {
  std::string name;
  double psnr = 0, ssim = 0, e_warp = 0, tc = 0;
};

struct EvalReport {
  std::vector<ClipScores> clips;
  ClipScores aggregate;  // means over clips
  void finalize();
  void write_csv(const std::string& path) const;
};

}  // namespace flowvid
