#include "data/image_io.hpp"

#include <algorithm>
#include <cstdio>
#include <memory>
#include <vector>

#include "core/check.hpp"

namespace flowvid {

namespace {
struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;
}  // namespace

void write_ppm(const std::string& path, const Tensor& frames, int frame_index) {
  const float* base = nullptr;
  int H = 0, W = 0;
  if (frames.rank() == 4) {
    FV_CHECK(frames.dim(1) == 3, "write_ppm wants 3 channels, got " << shape_str(frames.shape()));
    FV_CHECK(frame_index >= 0 && frame_index < frames.dim(0),
             "write_ppm: frame " << frame_index << " out of " << frames.dim(0));
    H = frames.dim(2);
    W = frames.dim(3);
    base = frames.data() + (size_t)frame_index * 3 * H * W;
  } else {
    FV_CHECK(frames.rank() == 3 && frames.dim(0) == 3,
             "write_ppm wants (3,H,W), got " << shape_str(frames.shape()));
    H = frames.dim(1);
    W = frames.dim(2);
    base = frames.data();
  }
  FilePtr f(std::fopen(path.c_str(), "wb"));
  FV_CHECK(f, "cannot open for write: " << path);
  std::fprintf(f.get(), "P6\n%d %d\n255\n", W, H);
  std::vector<unsigned char> row((size_t)W * 3);
  const size_t hw = (size_t)H * W;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = base[(size_t)c * hw + (size_t)y * W + x];
        v = std::clamp(v, 0.0f, 1.0f);
        row[(size_t)x * 3 + c] = (unsigned char)(v * 255.0f + 0.5f);
      }
    FV_CHECK(std::fwrite(row.data(), 1, row.size(), f.get()) == row.size(),
             "short write: " << path);
  }
}

Tensor read_ppm(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  FV_CHECK(f, "cannot open: " << path);
  char magic[3] = {0, 0, 0};
  FV_CHECK(std::fscanf(f.get(), "%2s", magic) == 1 && magic[0] == 'P' && magic[1] == '6',
           "not a binary ppm: " << path);
  int w = 0, h = 0, maxval = 0;
  FV_CHECK(std::fscanf(f.get(), "%d %d %d", &w, &h, &maxval) == 3 && w > 0 && h > 0 &&
               maxval == 255,
           "bad ppm header in " << path);
  std::fgetc(f.get());  // single whitespace after maxval
  std::vector<unsigned char> buf((size_t)w * h * 3);
  FV_CHECK(std::fread(buf.data(), 1, buf.size(), f.get()) == buf.size(),
           "short read: " << path);
  Tensor t(Shape{3, h, w});
  float* p = t.data();
  const size_t hw = (size_t)h * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        p[(size_t)c * hw + (size_t)y * w + x] =
            (float)buf[((size_t)y * w + x) * 3 + c] / 255.0f;
  return t;
}

}  // namespace flowvid
