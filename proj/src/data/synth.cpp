#include "data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "core/check.hpp"
#include "data/image_io.hpp"

namespace flowvid {

namespace {

bool near_multiple_of_half(float v) {
  return std::fabs(v * 2.0f - std::round(v * 2.0f)) < 1e-6f;
}

bool is_integral(float v) { return std::fabs(v - std::round(v)) < 1e-6f; }

// Pixel cell is [x-0.5, x+0.5); coverage of an axis-aligned square.
float square_coverage(float px, float py, float cx, float cy, float half) {
  const float ox = std::min(px + 0.5f, cx + half) - std::max(px - 0.5f, cx - half);
  const float oy = std::min(py + 0.5f, cy + half) - std::max(py - 0.5f, cy - half);
  if (ox <= 0.0f || oy <= 0.0f) return 0.0f;
  return std::min(1.0f, ox) * std::min(1.0f, oy);
}

float prim_coverage(const Primitive& p, float cx, float cy, int x, int y) {
  if (p.kind == Primitive::Kind::kCircle) {
    const float dx = (float)x - cx, dy = (float)y - cy;
    return dx * dx + dy * dy <= p.size * p.size ? 1.0f : 0.0f;
  }
  return square_coverage((float)x, (float)y, cx, cy, p.size * 0.5f);
}

void center_at(const SceneSpec& s, const Primitive& p, int frame, float& cx, float& cy) {
  cx = p.x0 + (float)frame * (p.vx + s.global_vx);
  cy = p.y0 + (float)frame * (p.vy + s.global_vy);
}

float bg_value(const SceneSpec& s, int c, float x, float y) {
  if (s.bg.kind == Background::Kind::kSolid) return s.bg.c0[c];
  const float extent = s.bg.axis == 0 ? (float)(s.width - 1) : (float)(s.height - 1);
  float t = (s.bg.axis == 0 ? x : y) / std::max(extent, 1.0f);
  t = t - std::floor(t);  // wraps under rigid panning so content stays defined
  return s.bg.c0[c] + (s.bg.c1[c] - s.bg.c0[c]) * t;
}

// Topmost primitive covering the pixel, -1 for background. Meaningful for
// binary-coverage scenes (integral placement).
int top_prim(const SceneSpec& s, int frame, int x, int y) {
  for (int i = (int)s.prims.size() - 1; i >= 0; --i) {
    float cx, cy;
    center_at(s, s.prims[i], frame, cx, cy);
    if (prim_coverage(s.prims[i], cx, cy, x, y) > 0.5f) return i;
  }
  return -1;
}

}  // namespace

void SceneSpec::validate() const {
  FV_CHECK(frames >= 1 && height >= 8 && width >= 8,
           "scene: bad dimensions " << frames << "x" << height << "x" << width);
  FV_CHECK(near_multiple_of_half(global_vx) && near_multiple_of_half(global_vy),
           "scene: global velocity must be a multiple of 0.5");
  bool any_fractional = !is_integral(global_vx) || !is_integral(global_vy);
  for (const Primitive& p : prims) {
    FV_CHECK(near_multiple_of_half(p.vx) && near_multiple_of_half(p.vy),
             "scene: primitive velocity must be a multiple of 0.5");
    const bool frac = !is_integral(p.vx) || !is_integral(p.vy) || !is_integral(p.x0) ||
                      !is_integral(p.y0) || !is_integral(p.size);
    any_fractional = any_fractional || frac;
    if (frac)
      FV_CHECK(p.kind == Primitive::Kind::kSquare,
               "scene: fractional placement is only exact for squares");
    for (int f = 0; f < frames; ++f) {
      float cx, cy;
      center_at(*this, p, f, cx, cy);
      const float half = p.kind == Primitive::Kind::kCircle ? p.size : p.size * 0.5f;
      FV_CHECK(cx - half >= 0.0f && cx + half <= (float)(width - 1) && cy - half >= 0.0f &&
                   cy + half <= (float)(height - 1),
               "scene: primitive leaves the frame at frame " << f << " (center " << cx << ","
                                                             << cy << ")");
    }
  }
  if (any_fractional)
    FV_CHECK(bg.kind == Background::Kind::kSolid,
             "scene: fractional motion needs a solid background to keep flow exact");
}

std::string SceneSpec::serialize() const {
  std::ostringstream os;
  os << "class " << class_id << "\n";
  os << "dims " << frames << " " << height << " " << width << "\n";
  os << "global " << global_vx << " " << global_vy << "\n";
  os << "bg " << (bg.kind == Background::Kind::kSolid ? "solid" : "gradient") << " " << bg.axis;
  for (int c = 0; c < 3; ++c) os << " " << bg.c0[c];
  for (int c = 0; c < 3; ++c) os << " " << bg.c1[c];
  os << "\n";
  for (const Primitive& p : prims) {
    os << "prim " << (p.kind == Primitive::Kind::kCircle ? "circle" : "square") << " " << p.size
       << " " << p.vx << " " << p.vy << " " << p.x0 << " " << p.y0;
    for (int c = 0; c < 3; ++c) os << " " << p.color[c];
    os << "\n";
  }
  return os.str();
}

SceneSpec SceneSpec::parse(const std::string& text) {
  SceneSpec s;
  s.prims.clear();
  std::istringstream is(text);
  std::string key;
  while (is >> key) {
    if (key == "class") {
      is >> s.class_id;
    } else if (key == "dims") {
      is >> s.frames >> s.height >> s.width;
    } else if (key == "global") {
      is >> s.global_vx >> s.global_vy;
    } else if (key == "bg") {
      std::string kind;
      is >> kind >> s.bg.axis;
      s.bg.kind = kind == "solid" ? Background::Kind::kSolid : Background::Kind::kGradient;
      for (int c = 0; c < 3; ++c) is >> s.bg.c0[c];
      for (int c = 0; c < 3; ++c) is >> s.bg.c1[c];
    } else if (key == "prim") {
      Primitive p;
      std::string kind;
      is >> kind >> p.size >> p.vx >> p.vy >> p.x0 >> p.y0;
      p.kind = kind == "circle" ? Primitive::Kind::kCircle : Primitive::Kind::kSquare;
      for (int c = 0; c < 3; ++c) is >> p.color[c];
      s.prims.push_back(p);
    } else {
      FV_CHECK(false, "scene parse: unknown key '" << key << "'");
    }
  }
  return s;
}

ClipSample generate_clip(const SceneSpec& spec) {
  spec.validate();
  const int N = spec.frames, H = spec.height, W = spec.width;
  ClipSample out;
  out.class_id = spec.class_id;
  out.spec = spec;
  out.frames = Tensor(Shape{N, 3, H, W});
  const size_t hw = (size_t)H * W;
  float* fr = out.frames.data();
  for (int f = 0; f < N; ++f) {
    // background content translates rigidly with the global velocity
    const float bx = (float)f * spec.global_vx;
    const float by = (float)f * spec.global_vy;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        float px[3];
        for (int c = 0; c < 3; ++c) px[c] = bg_value(spec, c, (float)x - bx, (float)y - by);
        for (const Primitive& p : spec.prims) {
          float cx, cy;
          center_at(spec, p, f, cx, cy);
          const float cov = prim_coverage(p, cx, cy, x, y);
          if (cov > 0.0f)
            for (int c = 0; c < 3; ++c) px[c] = px[c] * (1.0f - cov) + p.color[c] * cov;
        }
        for (int c = 0; c < 3; ++c)
          fr[((size_t)f * 3 + c) * hw + (size_t)y * W + x] = px[c];
      }
    }
  }

  if (N >= 2) {
    out.flow.forward = Tensor(Shape{N - 1, 2, H, W});
    out.flow.backward = Tensor(Shape{N - 1, 2, H, W});
    float* fw = out.flow.forward.data();
    float* bw = out.flow.backward.data();
    for (int k = 0; k < N - 1; ++k) {
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const size_t at = (size_t)k * 2 * hw + (size_t)y * W + x;
          float fvx = spec.global_vx, fvy = spec.global_vy;
          float bvx = -spec.global_vx, bvy = -spec.global_vy;
          for (int i = (int)spec.prims.size() - 1; i >= 0; --i) {
            const Primitive& p = spec.prims[i];
            float cx, cy;
            center_at(spec, p, k, cx, cy);
            if (prim_coverage(p, cx, cy, x, y) > 0.0f) {
              fvx = p.vx + spec.global_vx;
              fvy = p.vy + spec.global_vy;
              break;
            }
          }
          for (int i = (int)spec.prims.size() - 1; i >= 0; --i) {
            const Primitive& p = spec.prims[i];
            float cx, cy;
            center_at(spec, p, k + 1, cx, cy);
            if (prim_coverage(p, cx, cy, x, y) > 0.0f) {
              bvx = -(p.vx + spec.global_vx);
              bvy = -(p.vy + spec.global_vy);
              break;
            }
          }
          fw[at] = fvx;
          fw[at + hw] = fvy;
          bw[at] = bvx;
          bw[at + hw] = bvy;
        }
      }
    }
  }
  return out;
}

Tensor occlusion_mask(const SceneSpec& spec, int pair) {
  FV_CHECK(pair >= 0 && pair + 1 < spec.frames, "occlusion_mask: pair " << pair << " out of "
                                                                        << spec.frames - 1);
  const int H = spec.height, W = spec.width;
  Tensor occ(Shape{H, W});
  float* po = occ.data();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int here = top_prim(spec, pair, x, y);
      float vx = spec.global_vx, vy = spec.global_vy;
      if (here >= 0) {
        vx = spec.prims[here].vx + spec.global_vx;
        vy = spec.prims[here].vy + spec.global_vy;
      }
      const int dx = (int)std::lround((float)x + vx);
      const int dy = (int)std::lround((float)y + vy);
      int there = -2;  // off-frame destinations never claim a match
      if (dx >= 0 && dx < W && dy >= 0 && dy < H) there = top_prim(spec, pair + 1, dx, dy);
      po[(size_t)y * W + x] = (here == there) ? 0.0f : 1.0f;
    }
  }
  return occ;
}

namespace {

void dilate_binary(std::vector<uint8_t>& m, int H, int W, int r) {
  std::vector<uint8_t> src = m;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (m[(size_t)y * W + x]) continue;
      bool hit = false;
      for (int dy = -r; dy <= r && !hit; ++dy)
        for (int dx = -r; dx <= r && !hit; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < H && xx >= 0 && xx < W && src[(size_t)yy * W + xx]) hit = true;
        }
      if (hit) m[(size_t)y * W + x] = 1;
    }
}

std::vector<uint8_t> prim_support(const SceneSpec& spec, int prim, int frame) {
  const int H = spec.height, W = spec.width;
  std::vector<uint8_t> s((size_t)H * W, 0);
  const Primitive& p = spec.prims[prim];
  float cx, cy;
  center_at(spec, p, frame, cx, cy);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (prim_coverage(p, cx, cy, x, y) > 0.0f) s[(size_t)y * W + x] = 1;
  return s;
}

}  // namespace

Tensor generate_mask(const MaskSpec& mspec, const SceneSpec& spec, Rng& rng) {
  const int N = spec.frames, H = spec.height, W = spec.width;
  Tensor mask = Tensor::full({N, 1, H, W}, 1.0f);
  float* pm = mask.data();
  const size_t hw = (size_t)H * W;

  if (mspec.kind == MaskSpec::Kind::kObject) {
    FV_CHECK(mspec.target_prim >= 0 && mspec.target_prim < (int)spec.prims.size(),
             "object mask: target primitive " << mspec.target_prim << " of "
                                              << spec.prims.size());
    for (int f = 0; f < N; ++f) {
      std::vector<uint8_t> hole = prim_support(spec, mspec.target_prim, f);
      dilate_binary(hole, H, W, mspec.dilation);
      float* mf = pm + (size_t)f * hw;
      for (size_t i = 0; i < hw; ++i)
        if (hole[i]) mf[i] = 0.0f;
    }
    return mask;
  }

  // Background strokes: rectangles that stay clear of every primitive support
  // across all frames.
  std::vector<uint8_t> forbidden((size_t)H * W, 0);
  for (size_t p = 0; p < spec.prims.size(); ++p)
    for (int f = 0; f < N; ++f) {
      std::vector<uint8_t> s = prim_support(spec, (int)p, f);
      for (size_t i = 0; i < forbidden.size(); ++i) forbidden[i] |= s[i];
    }
  for (int f = 0; f < N; ++f) {
    float* mf = pm + (size_t)f * hw;
    int placed = 0, attempts = 0;
    while (placed < mspec.strokes && attempts < mspec.strokes * 40) {
      ++attempts;
      const int sw = rng.uniform_int(mspec.min_size, mspec.max_size);
      const int sh = rng.uniform_int(mspec.min_size, mspec.max_size);
      if (sw >= W || sh >= H) continue;
      const int x0 = rng.uniform_int(0, W - sw - 1);
      const int y0 = rng.uniform_int(0, H - sh - 1);
      bool clear = true;
      for (int y = y0; y < y0 + sh && clear; ++y)
        for (int x = x0; x < x0 + sw && clear; ++x)
          if (forbidden[(size_t)y * W + x]) clear = false;
      if (!clear) continue;
      for (int y = y0; y < y0 + sh; ++y)
        for (int x = x0; x < x0 + sw; ++x) mf[(size_t)y * W + x] = 0.0f;
      ++placed;
    }
  }
  return mask;
}

SceneSpec make_scene(int class_id, int frames, int height, int width, Rng& rng) {
  FV_CHECK(class_id >= 0 && class_id < 8, "scene class " << class_id << " out of [0,8)");
  SceneSpec s;
  s.class_id = class_id;
  s.frames = frames;
  s.height = height;
  s.width = width;

  const bool circle = class_id < 4;
  const int motion = class_id % 4;  // 0 right, 1 down, 2 diagonal, 3 rigid pan

  s.bg.kind = Background::Kind::kGradient;
  s.bg.axis = rng.uniform_int(0, 1);
  for (int c = 0; c < 3; ++c) {
    s.bg.c0[c] = rng.uniform(0.1f, 0.4f);
    s.bg.c1[c] = rng.uniform(0.6f, 0.9f);
  }

  Primitive p;
  p.kind = circle ? Primitive::Kind::kCircle : Primitive::Kind::kSquare;
  for (int c = 0; c < 3; ++c) p.color[c] = rng.uniform(0.2f, 0.95f);
  p.size = (float)rng.uniform_int(3, std::max(4, width / 6));
  // odd side keeps square edges on half-integer cell boundaries, so the
  // coverage stays binary and the warp identity holds on gradients
  if (!circle && (int)p.size % 2 == 0) p.size += 1.0f;

  // velocity capped so the whole trajectory fits the frame
  const float half_pre = p.kind == Primitive::Kind::kCircle ? p.size : p.size * 0.5f;
  const int margin = 1;
  auto vcap = [&](int extent) {
    const int avail = extent - 1 - 2 * ((int)std::ceil(half_pre) + margin);
    return std::max(0, avail / std::max(1, frames - 1));
  };
  const int cap_x = vcap(width), cap_y = vcap(height);
  FV_CHECK(cap_x >= 1 && cap_y >= 1, "scene class " << class_id << ": " << frames
                                                    << " frames of motion cannot fit in "
                                                    << width << "x" << height);
  int vx = 0, vy = 0;
  if (motion == 0) vx = std::min(rng.uniform_int(1, 2), cap_x);
  if (motion == 1) vy = std::min(rng.uniform_int(1, 2), cap_y);
  if (motion == 2) {
    vx = std::min(rng.uniform_int(1, 2), cap_x);
    vy = std::min(rng.uniform_int(1, 2), cap_y);
  }
  if (motion == 3) {
    s.global_vx = (float)std::min(rng.uniform_int(1, 2), cap_x);
    s.global_vy = (float)std::min(rng.uniform_int(0, 1), cap_y);
  } else {
    p.vx = (float)vx;
    p.vy = (float)vy;
  }

  // keep the full trajectory inside the frame
  const float half = half_pre;
  const float tvx = p.vx + s.global_vx, tvy = p.vy + s.global_vy;
  const float travel_x = tvx * (float)(frames - 1);
  const float travel_y = tvy * (float)(frames - 1);
  const int x_lo = (int)std::ceil(half) + margin + (tvx < 0 ? (int)std::ceil(-travel_x) : 0);
  const int x_hi = width - 1 - (int)std::ceil(half) - margin - (tvx > 0 ? (int)std::ceil(travel_x) : 0);
  const int y_lo = (int)std::ceil(half) + margin + (tvy < 0 ? (int)std::ceil(-travel_y) : 0);
  const int y_hi = height - 1 - (int)std::ceil(half) - margin - (tvy > 0 ? (int)std::ceil(travel_y) : 0);
  FV_CHECK(x_hi >= x_lo && y_hi >= y_lo,
           "scene class " << class_id << ": no room for the trajectory in " << width << "x"
                          << height);
  p.x0 = (float)rng.uniform_int(x_lo, x_hi);
  p.y0 = (float)rng.uniform_int(y_lo, y_hi);
  s.prims.push_back(p);
  s.validate();
  return s;
}

namespace fs = std::filesystem;

void save_sample(const std::string& dir, const ClipSample& sample, bool dump_ppm) {
  fs::create_directories(dir);
  write_ten(dir + "/clip.ten", sample.frames);
  if (sample.mask.defined()) write_ten(dir + "/mask.ten", sample.mask);
  if (sample.flow.forward.defined()) write_flo2(dir + "/clip.flo2", sample.flow);
  std::ofstream meta(dir + "/meta.txt");
  FV_CHECK(meta.good(), "cannot write " << dir << "/meta.txt");
  meta << sample.spec.serialize();
  if (dump_ppm) {
    for (int f = 0; f < sample.frames.dim(0); ++f) {
      std::ostringstream name;
      name << dir << "/frame_" << (f < 10 ? "0" : "") << f << ".ppm";
      write_ppm(name.str(), sample.frames, f);
    }
  }
}

ClipSample load_sample(const std::string& dir) {
  ClipSample s;
  s.frames = read_ten(dir + "/clip.ten");
  if (fs::exists(dir + "/mask.ten")) s.mask = read_ten(dir + "/mask.ten");
  if (fs::exists(dir + "/clip.flo2")) s.flow = read_flo2(dir + "/clip.flo2");
  std::ifstream meta(dir + "/meta.txt");
  FV_CHECK(meta.good(), "cannot read " << dir << "/meta.txt");
  std::stringstream buf;
  buf << meta.rdbuf();
  s.spec = SceneSpec::parse(buf.str());
  s.class_id = s.spec.class_id;
  return s;
}

}  // namespace flowvid
