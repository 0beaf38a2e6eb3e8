#pragma once

#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "flow/flow_field.hpp"

namespace flowvid {

// Scenes are a static or rigidly translating background plus moving
// primitives. Velocities are integral (or half-integral for squares over a
// solid background), so the ground-truth flow is exact by construction and
// disocclusion regions have a closed form.

struct Primitive {
  enum class Kind { kCircle, kSquare };
  Kind kind = Kind::kSquare;
  float color[3] = {0.8f, 0.2f, 0.2f};
  float size = 6.0f;  // circle radius / square side
  float vx = 0.0f, vy = 0.0f;
  float x0 = 0.0f, y0 = 0.0f;  // center at frame 0
};

struct Background {
  enum class Kind { kSolid, kGradient };
  Kind kind = Kind::kGradient;
  float c0[3] = {0.15f, 0.2f, 0.3f};
  float c1[3] = {0.7f, 0.75f, 0.8f};
  int axis = 0;  // 0 = horizontal ramp, 1 = vertical
};

struct SceneSpec {
  int class_id = 0;
  int frames = 16, height = 32, width = 32;
  Background bg;
  std::vector<Primitive> prims;
  float global_vx = 0.0f, global_vy = 0.0f;  // whole-scene translation

  void validate() const;  // velocity grid, in-frame trajectories
  std::string serialize() const;
  static SceneSpec parse(const std::string& text);
};

struct MaskSpec {
  enum class Kind { kBackgroundRandom, kObject };
  Kind kind = Kind::kBackgroundRandom;
  int strokes = 6;
  int min_size = 4, max_size = 10;
  int target_prim = 0;
  int dilation = 2;
};

struct ClipSample {
  Tensor frames;  // (N,3,H,W), values in [0,1]
  FlowPair flow;
  Tensor mask;  // (N,1,H,W), 1 = known; filled by generate_mask
  int class_id = 0;
  SceneSpec spec;
};

// Deterministic given the spec; throws if a primitive leaves the frame.
ClipSample generate_clip(const SceneSpec& spec);

// Binary masks, (N,1,H,W). Background strokes avoid every primitive support;
// object masks cover the target primitive with the dilation margin.
Tensor generate_mask(const MaskSpec& mspec, const SceneSpec& spec, Rng& rng);

// Pixels of frame `pair` whose value cannot be recovered by warping frame
// pair+1 backwards (content newly covered by a primitive). (H,W), 1 = occluded.
Tensor occlusion_mask(const SceneSpec& spec, int pair);

// The eight stock scene classes: {circle, square} x {right, down, diagonal,
// rigid whole-scene pan}. Layout randomized from rng.
SceneSpec make_scene(int class_id, int frames, int height, int width, Rng& rng);

// On-disk sample layout: <dir>/clip.ten, mask.ten, clip.flo2, meta.txt.
void save_sample(const std::string& dir, const ClipSample& sample, bool dump_ppm = false);
ClipSample load_sample(const std::string& dir);

}  // namespace flowvid
