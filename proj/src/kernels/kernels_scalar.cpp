#include "kernels/kernels.hpp"

#include <cmath>

namespace flowvid {
namespace kernels {
namespace {

void s_vadd(const float* a, const float* b, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void s_vsub(const float* a, const float* b, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void s_vmul(const float* a, const float* b, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void s_vscale(const float* a, float s, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] * s;
}

void s_vaxpy(float s, const float* x, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += s * x[i];
}

void s_vfma(const float* a, const float* b, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

// Reductions accumulate in double: the float->double widening makes each
// product exact, so the result is independent of traversal chunking.
double s_vdot(const float* a, const float* b, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += (double)a[i] * (double)b[i];
  return acc;
}

double s_vsum(const float* a, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += (double)a[i];
  return acc;
}

double s_vsumsq(const float* a, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += (double)a[i] * (double)a[i];
  return acc;
}

double s_vsumabs(const float* a, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += std::fabs((double)a[i]);
  return acc;
}

float s_vmax(const float* a, size_t n) {
  float m = a[0];
  for (size_t i = 1; i < n; ++i)
    if (a[i] > m) m = a[i];
  return m;
}

void s_gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + (size_t)i * n;
    if (!acc)
      for (int j = 0; j < n; ++j) crow[j] = 0.0f;
    for (int p = 0; p < k; ++p) {
      const float av = a[(size_t)i * k + p];
      const float* brow = b + (size_t)p * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void s_gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + (size_t)i * k;
    for (int j = 0; j < n; ++j) {
      const float* brow = b + (size_t)j * k;
      float s = 0.0f;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      float* cp = c + (size_t)i * n + j;
      *cp = acc ? *cp + s : s;
    }
  }
}

void s_gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  if (!acc)
    for (size_t i = 0; i < (size_t)m * n; ++i) c[i] = 0.0f;
  for (int p = 0; p < k; ++p) {
    const float* arow = a + (size_t)p * m;
    const float* brow = b + (size_t)p * n;
    for (int i = 0; i < m; ++i) {
      const float av = arow[i];
      float* crow = c + (size_t)i * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

const Kernels& scalar() {
  static const Kernels table = {
      "scalar",  s_vadd,    s_vsub, s_vmul,    s_vscale,   s_vaxpy,
      s_vfma,    s_vdot,    s_vsum, s_vsumsq,  s_vsumabs,  s_vmax,
      s_gemm_nn, s_gemm_nt, s_gemm_tn,
  };
  return table;
}

}  // namespace kernels
}  // namespace flowvid
