#pragma once

#include <string>

#include "core/tensor.hpp"

namespace flowvid {

// Binary PPM (P6, maxval 255). Values are clamped to [0,1] on write.
// frames is (N,3,H,W) or (3,H,W); frame_index selects the frame in the
// 4-d case.
void write_ppm(const std::string& path, const Tensor& frames, int frame_index = 0);

// Returns (3,H,W) with values in [0,1].
Tensor read_ppm(const std::string& path);

}  // namespace flowvid
