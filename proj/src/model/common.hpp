#pragma once

#include <string>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace flowvid {

struct ModelConfig {
  int res = 32;          // spatial size, divisible by 2^(levels-1)
  int frames_max = 32;   // frame-position table size (clip frames + anchor)
  int in_channels = 3;   // latent channels under the identity codec
  int base_width = 32;   // width doubles per level
  int levels = 3;
  int cond_dim = 64;
  int cond_tokens = 4;
  int num_classes = 8;
  int time_dim = 64;
  int time_hidden = 128;

  int width(int level) const { return base_width << level; }
  void validate() const;

  void save(const std::string& path) const;
  static ModelConfig load(const std::string& path);
};

struct Cond {
  int class_id = 0;
  bool is_null = false;  // unconditional token row, used by guidance
};

// Per-up-block feature maps from the flow branch, deepest scale first.
// scales[s] is (P, C_s, h_s, w_s) with C_s equal to the up block width.
struct MultiScaleFlowFeatures {
  std::vector<Tensor> scales;
};

// Write-once key/value store for the flow adapters. Entries are projected
// flow tokens, (P*h_s*w_s, C_s) per scale, immutable once filled.
struct MemoryBank {
  struct ScaleEntry {
    Tensor keys, values;
    bool filled = false;
  };
  std::vector<ScaleEntry> scales;
  bool all_filled() const {
    if (scales.empty()) return false;
    for (const auto& s : scales)
      if (!s.filled) return false;
    return true;
  }
};

// Instrumentation shared by the sampler, trainer and bench harness.
struct RunStats {
  long denoiser_frame_forwards = 0;
  long denoiser_calls = 0;
  long flow_branch_calls = 0;
  std::vector<long> kv_projection_calls;  // one slot per adapter scale

  void reset(int scales) {
    denoiser_frame_forwards = 0;
    denoiser_calls = 0;
    flow_branch_calls = 0;
    kv_projection_calls.assign(scales, 0);
  }
  long kv_total() const {
    long t = 0;
    for (long v : kv_projection_calls) t += v;
    return t;
  }
};

// One denoiser invocation. clip_indices maps each row to its clip frame,
// -1 for the anchor row; sub-clip forwards pass the subset they carry.
struct DenoiserBatch {
  Tensor z_t;       // (F, C, H, W)
  Tensor mask;      // (F, 1, H, W), 1 = known
  Tensor z_masked;  // (F, C, H, W)
  int t = 0;
  Cond cond;
  std::vector<int> clip_indices;
  bool anchored = false;
};

// Flow pairs a frame attends to: pair i-1->i and i->i+1 where they exist;
// the anchor shares the first pair. Returns {first_pair, count}.
std::pair<int, int> flow_pair_range(int clip_index, int num_pairs);

// Position-embedding index for a row. With an anchor present, clip frames
// shift up by one so their indices stay stable across anchored runs.
int frame_position(int clip_index, bool anchored);

}  // namespace flowvid
