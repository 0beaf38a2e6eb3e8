#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace flowvid {
namespace kernels {

// Row-major GEMM family. The contraction length is always k, the output is
// always m x n:
//   nn: a is m x k, b is k x n
//   nt: a is m x k, b is n x k   (b logically transposed)
//   tn: a is k x m, b is k x n   (a logically transposed)
// acc=false overwrites c, acc=true accumulates into it.
struct Kernels {
  const char* name;
  void (*vadd)(const float* a, const float* b, float* y, size_t n);
  void (*vsub)(const float* a, const float* b, float* y, size_t n);
  void (*vmul)(const float* a, const float* b, float* y, size_t n);
  void (*vscale)(const float* a, float s, float* y, size_t n);
  void (*vaxpy)(float s, const float* x, float* y, size_t n);   // y += s*x
  void (*vfma)(const float* a, const float* b, float* y, size_t n);  // y += a*b
  double (*vdot)(const float* a, const float* b, size_t n);
  double (*vsum)(const float* a, size_t n);
  double (*vsumsq)(const float* a, size_t n);
  double (*vsumabs)(const float* a, size_t n);
  float (*vmax)(const float* a, size_t n);
  void (*gemm_nn)(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
  void (*gemm_nt)(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
  void (*gemm_tn)(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
};

enum class Backend { kAuto, kScalar, kAvx2 };

// Active kernel table. kAuto probes the CPU once and picks the widest
// supported variant; selection is deterministic on a given machine.
const Kernels& active();
void select(Backend b);
Backend selected();
std::vector<std::string> available();

// Scalar reference path, always present. SIMD variants are equivalence-tested
// against it.
const Kernels& scalar();

}  // namespace kernels
}  // namespace flowvid
