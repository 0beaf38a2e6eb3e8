// AVX2+FMA kernel variants. Compiled with -mavx2 -mfma on x86 builds only;
// the dispatcher checks cpu support at runtime before handing these out.

#include "kernels/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cmath>
#include <cstring>
#include <vector>

namespace flowvid {
namespace kernels {
namespace {

void a_vadd(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void a_vsub(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}

void a_vmul(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void a_vscale(const float* a, float s, float* y, size_t n) {
  const __m256 vs = _mm256_set1_ps(s);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), vs));
  for (; i < n; ++i) y[i] = a[i] * s;
}

void a_vaxpy(float s, const float* x, float* y, size_t n) {
  const __m256 vs = _mm256_set1_ps(s);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(vs, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += s * x[i];
}

void a_vfma(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(
        y + i, _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a[i] * b[i];
}

// Double accumulation, lane pairs widened with cvtps_pd. Bitwise equal to the
// scalar path is not guaranteed (different association), equal to ~1e-15 rel.
double a_vdot(const float* a, const float* b, size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 av = _mm256_loadu_ps(a + i);
    __m256 bv = _mm256_loadu_ps(b + i);
    __m256d alo = _mm256_cvtps_pd(_mm256_castps256_ps128(av));
    __m256d ahi = _mm256_cvtps_pd(_mm256_extractf128_ps(av, 1));
    __m256d blo = _mm256_cvtps_pd(_mm256_castps256_ps128(bv));
    __m256d bhi = _mm256_cvtps_pd(_mm256_extractf128_ps(bv, 1));
    acc0 = _mm256_fmadd_pd(alo, blo, acc0);
    acc1 = _mm256_fmadd_pd(ahi, bhi, acc1);
  }
  double buf[4];
  _mm256_storeu_pd(buf, _mm256_add_pd(acc0, acc1));
  double acc = buf[0] + buf[1] + buf[2] + buf[3];
  for (; i < n; ++i) acc += (double)a[i] * (double)b[i];
  return acc;
}

double a_vsum(const float* a, size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 av = _mm256_loadu_ps(a + i);
    acc0 = _mm256_add_pd(acc0, _mm256_cvtps_pd(_mm256_castps256_ps128(av)));
    acc1 = _mm256_add_pd(acc1, _mm256_cvtps_pd(_mm256_extractf128_ps(av, 1)));
  }
  double buf[4];
  _mm256_storeu_pd(buf, _mm256_add_pd(acc0, acc1));
  double acc = buf[0] + buf[1] + buf[2] + buf[3];
  for (; i < n; ++i) acc += (double)a[i];
  return acc;
}

double a_vsumsq(const float* a, size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 av = _mm256_loadu_ps(a + i);
    __m256d lo = _mm256_cvtps_pd(_mm256_castps256_ps128(av));
    __m256d hi = _mm256_cvtps_pd(_mm256_extractf128_ps(av, 1));
    acc0 = _mm256_fmadd_pd(lo, lo, acc0);
    acc1 = _mm256_fmadd_pd(hi, hi, acc1);
  }
  double buf[4];
  _mm256_storeu_pd(buf, _mm256_add_pd(acc0, acc1));
  double acc = buf[0] + buf[1] + buf[2] + buf[3];
  for (; i < n; ++i) acc += (double)a[i] * (double)a[i];
  return acc;
}

double a_vsumabs(const float* a, size_t n) {
  const __m256 signmask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 av = _mm256_and_ps(_mm256_loadu_ps(a + i), signmask);
    acc0 = _mm256_add_pd(acc0, _mm256_cvtps_pd(_mm256_castps256_ps128(av)));
    acc1 = _mm256_add_pd(acc1, _mm256_cvtps_pd(_mm256_extractf128_ps(av, 1)));
  }
  double buf[4];
  _mm256_storeu_pd(buf, _mm256_add_pd(acc0, acc1));
  double acc = buf[0] + buf[1] + buf[2] + buf[3];
  for (; i < n; ++i) acc += std::fabs((double)a[i]);
  return acc;
}

float a_vmax(const float* a, size_t n) {
  size_t i = 0;
  float m = a[0];
  if (n >= 8) {
    __m256 vm = _mm256_loadu_ps(a);
    for (i = 8; i + 8 <= n; i += 8) vm = _mm256_max_ps(vm, _mm256_loadu_ps(a + i));
    float buf[8];
    _mm256_storeu_ps(buf, vm);
    m = buf[0];
    for (int j = 1; j < 8; ++j)
      if (buf[j] > m) m = buf[j];
  }
  for (; i < n; ++i)
    if (a[i] > m) m = a[i];
  return m;
}

// 4x16 register-blocked panel kernel; B rows are reused across four A rows.
void a_gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(float) * (size_t)m * n);
  const int m4 = m & ~3;
  for (int i = 0; i < m4; i += 4) {
    const float* a0 = a + (size_t)(i + 0) * k;
    const float* a1 = a + (size_t)(i + 1) * k;
    const float* a2 = a + (size_t)(i + 2) * k;
    const float* a3 = a + (size_t)(i + 3) * k;
    float* c0 = c + (size_t)(i + 0) * n;
    float* c1 = c + (size_t)(i + 1) * n;
    float* c2 = c + (size_t)(i + 2) * n;
    float* c3 = c + (size_t)(i + 3) * n;
    int j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256 c00 = _mm256_loadu_ps(c0 + j), c01 = _mm256_loadu_ps(c0 + j + 8);
      __m256 c10 = _mm256_loadu_ps(c1 + j), c11 = _mm256_loadu_ps(c1 + j + 8);
      __m256 c20 = _mm256_loadu_ps(c2 + j), c21 = _mm256_loadu_ps(c2 + j + 8);
      __m256 c30 = _mm256_loadu_ps(c3 + j), c31 = _mm256_loadu_ps(c3 + j + 8);
      for (int p = 0; p < k; ++p) {
        const float* brow = b + (size_t)p * n + j;
        __m256 b0 = _mm256_loadu_ps(brow);
        __m256 b1 = _mm256_loadu_ps(brow + 8);
        __m256 av;
        av = _mm256_set1_ps(a0[p]);
        c00 = _mm256_fmadd_ps(av, b0, c00);
        c01 = _mm256_fmadd_ps(av, b1, c01);
        av = _mm256_set1_ps(a1[p]);
        c10 = _mm256_fmadd_ps(av, b0, c10);
        c11 = _mm256_fmadd_ps(av, b1, c11);
        av = _mm256_set1_ps(a2[p]);
        c20 = _mm256_fmadd_ps(av, b0, c20);
        c21 = _mm256_fmadd_ps(av, b1, c21);
        av = _mm256_set1_ps(a3[p]);
        c30 = _mm256_fmadd_ps(av, b0, c30);
        c31 = _mm256_fmadd_ps(av, b1, c31);
      }
      _mm256_storeu_ps(c0 + j, c00);
      _mm256_storeu_ps(c0 + j + 8, c01);
      _mm256_storeu_ps(c1 + j, c10);
      _mm256_storeu_ps(c1 + j + 8, c11);
      _mm256_storeu_ps(c2 + j, c20);
      _mm256_storeu_ps(c2 + j + 8, c21);
      _mm256_storeu_ps(c3 + j, c30);
      _mm256_storeu_ps(c3 + j + 8, c31);
    }
    for (; j + 8 <= n; j += 8) {
      __m256 c00 = _mm256_loadu_ps(c0 + j);
      __m256 c10 = _mm256_loadu_ps(c1 + j);
      __m256 c20 = _mm256_loadu_ps(c2 + j);
      __m256 c30 = _mm256_loadu_ps(c3 + j);
      for (int p = 0; p < k; ++p) {
        __m256 b0 = _mm256_loadu_ps(b + (size_t)p * n + j);
        c00 = _mm256_fmadd_ps(_mm256_set1_ps(a0[p]), b0, c00);
        c10 = _mm256_fmadd_ps(_mm256_set1_ps(a1[p]), b0, c10);
        c20 = _mm256_fmadd_ps(_mm256_set1_ps(a2[p]), b0, c20);
        c30 = _mm256_fmadd_ps(_mm256_set1_ps(a3[p]), b0, c30);
      }
      _mm256_storeu_ps(c0 + j, c00);
      _mm256_storeu_ps(c1 + j, c10);
      _mm256_storeu_ps(c2 + j, c20);
      _mm256_storeu_ps(c3 + j, c30);
    }
    for (; j < n; ++j) {
      float s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
      for (int p = 0; p < k; ++p) {
        const float bv = b[(size_t)p * n + j];
        s0 += a0[p] * bv;
        s1 += a1[p] * bv;
        s2 += a2[p] * bv;
        s3 += a3[p] * bv;
      }
      c0[j] = s0;
      c1[j] = s1;
      c2[j] = s2;
      c3[j] = s3;
    }
  }
  for (int i = m4; i < m; ++i) {
    const float* arow = a + (size_t)i * k;
    float* crow = c + (size_t)i * n;
    int j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256 cc = _mm256_loadu_ps(crow + j);
      for (int p = 0; p < k; ++p)
        cc = _mm256_fmadd_ps(_mm256_set1_ps(arow[p]), _mm256_loadu_ps(b + (size_t)p * n + j), cc);
      _mm256_storeu_ps(crow + j, cc);
    }
    for (; j < n; ++j) {
      float s = crow[j];
      for (int p = 0; p < k; ++p) s += arow[p] * b[(size_t)p * n + j];
      crow[j] = s;
    }
  }
}

std::vector<float>& scratch() {
  thread_local std::vector<float> buf;
  return buf;
}

// nt and tn route through a transpose into scratch plus the nn panel kernel;
// the transpose pass is negligible next to the multiply.
void a_gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  std::vector<float>& t = scratch();
  if (t.size() < (size_t)k * n) t.resize((size_t)k * n);
  for (int j = 0; j < n; ++j)
    for (int p = 0; p < k; ++p) t[(size_t)p * n + j] = b[(size_t)j * k + p];
  a_gemm_nn(a, t.data(), c, m, k, n, acc);
}

void a_gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  std::vector<float>& t = scratch();
  if (t.size() < (size_t)m * k) t.resize((size_t)m * k);
  for (int p = 0; p < k; ++p)
    for (int i = 0; i < m; ++i) t[(size_t)i * k + p] = a[(size_t)p * m + i];
  a_gemm_nn(t.data(), b, c, m, k, n, acc);
}

const Kernels avx2_table = {
    "avx2",    a_vadd,    a_vsub, a_vmul,   a_vscale,  a_vaxpy,
    a_vfma,    a_vdot,    a_vsum, a_vsumsq, a_vsumabs, a_vmax,
    a_gemm_nn, a_gemm_nt, a_gemm_tn,
};

}  // namespace

const Kernels* avx2_build() { return &avx2_table; }

}  // namespace kernels
}  // namespace flowvid

#else

namespace flowvid {
namespace kernels {
const Kernels* avx2_build() { return nullptr; }
}  // namespace kernels
}  // namespace flowvid

#endif
