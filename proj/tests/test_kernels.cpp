#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "core/rng.hpp"
#include "kernels/kernels.hpp"

using namespace flowvid;

namespace {

std::vector<float> random_vec(size_t n, Rng& rng) {
  std::vector<float> v(n);
  rng.fill_normal(v.data(), n);
  return v;
}

// Triple loop in double precision, the reference for both backends.
std::vector<float> gemm_oracle(const std::vector<float>& a, const std::vector<float>& b, int m,
                               int k, int n, char mode) {
  std::vector<float> c((size_t)m * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        double av = mode == 't' ? a[(size_t)p * m + i] : a[(size_t)i * k + p];
        double bv = mode == 'n' ? b[(size_t)p * n + j]
                                : (mode == 'b' ? b[(size_t)j * k + p] : b[(size_t)p * n + j]);
        acc += av * bv;
      }
      c[(size_t)i * n + j] = (float)acc;
    }
  return c;
}

void expect_close(const std::vector<float>& got, const std::vector<float>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < got.size(); ++i) {
    const double denom = std::max(1.0, std::fabs((double)want[i]));
    CHECK(std::fabs((double)got[i] - want[i]) / denom < tol);
  }
}

bool has_avx2() {
  for (const auto& name : kernels::available())
    if (name == "avx2") return true;
  return false;
}

}  // namespace

TEST_CASE("dispatch exposes scalar and picks a backend") {
  auto backends = kernels::available();
  REQUIRE(!backends.empty());
  CHECK(backends[0] == "scalar");
  kernels::select(kernels::Backend::kAuto);
  CHECK(kernels::active().name != nullptr);
  kernels::select(kernels::Backend::kScalar);
  CHECK(std::string(kernels::active().name) == "scalar");
  kernels::select(kernels::Backend::kAuto);
}

TEST_CASE("elementwise kernels agree across backends") {
  if (!has_avx2()) return;
  Rng rng(7);
  for (size_t n : {1ul, 7ul, 8ul, 9ul, 64ul, 1000ul, 1023ul}) {
    auto a = random_vec(n, rng);
    auto b = random_vec(n, rng);
    const kernels::Kernels& s = kernels::scalar();
    kernels::select(kernels::Backend::kAvx2);
    const kernels::Kernels& v = kernels::active();

    std::vector<float> ys(n), yv(n);
    s.vadd(a.data(), b.data(), ys.data(), n);
    v.vadd(a.data(), b.data(), yv.data(), n);
    CHECK(ys == yv);

    s.vmul(a.data(), b.data(), ys.data(), n);
    v.vmul(a.data(), b.data(), yv.data(), n);
    CHECK(ys == yv);

    s.vsub(a.data(), b.data(), ys.data(), n);
    v.vsub(a.data(), b.data(), yv.data(), n);
    CHECK(ys == yv);

    s.vscale(a.data(), 1.7f, ys.data(), n);
    v.vscale(a.data(), 1.7f, yv.data(), n);
    CHECK(ys == yv);

    ys = b;
    yv = b;
    s.vaxpy(0.3f, a.data(), ys.data(), n);
    v.vaxpy(0.3f, a.data(), yv.data(), n);
    expect_close(yv, ys, 1e-6);

    CHECK(s.vdot(a.data(), b.data(), n) == doctest::Approx(v.vdot(a.data(), b.data(), n)));
    CHECK(s.vsum(a.data(), n) == doctest::Approx(v.vsum(a.data(), n)));
    CHECK(s.vsumsq(a.data(), n) == doctest::Approx(v.vsumsq(a.data(), n)));
    CHECK(s.vsumabs(a.data(), n) == doctest::Approx(v.vsumabs(a.data(), n)));
    CHECK(s.vmax(a.data(), n) == v.vmax(a.data(), n));
  }
  kernels::select(kernels::Backend::kAuto);
}

TEST_CASE("gemm variants match the double-precision oracle on both backends") {
  Rng rng(11);
  struct Case {
    int m, k, n;
  };
  for (const Case& c : {Case{1, 1, 1}, Case{3, 5, 7}, Case{4, 16, 16}, Case{5, 17, 33},
                        Case{32, 64, 48}, Case{13, 100, 9}}) {
    auto a = random_vec((size_t)c.m * c.k, rng);
    auto b_nn = random_vec((size_t)c.k * c.n, rng);
    auto b_nt = random_vec((size_t)c.n * c.k, rng);
    auto a_tn = random_vec((size_t)c.k * c.m, rng);

    for (auto backend : {kernels::Backend::kScalar, kernels::Backend::kAvx2}) {
      if (backend == kernels::Backend::kAvx2 && !has_avx2()) continue;
      kernels::select(backend);
      const kernels::Kernels& K = kernels::active();

      std::vector<float> out((size_t)c.m * c.n, 0.0f);
      K.gemm_nn(a.data(), b_nn.data(), out.data(), c.m, c.k, c.n, false);
      expect_close(out, gemm_oracle(a, b_nn, c.m, c.k, c.n, 'n'), 1e-5);

      K.gemm_nt(a.data(), b_nt.data(), out.data(), c.m, c.k, c.n, false);
      expect_close(out, gemm_oracle(a, b_nt, c.m, c.k, c.n, 'b'), 1e-5);

      K.gemm_tn(a_tn.data(), b_nn.data(), out.data(), c.m, c.k, c.n, false);
      expect_close(out, gemm_oracle(a_tn, b_nn, c.m, c.k, c.n, 't'), 1e-5);

      // accumulate mode adds on top
      std::vector<float> acc((size_t)c.m * c.n, 1.0f);
      K.gemm_nn(a.data(), b_nn.data(), acc.data(), c.m, c.k, c.n, true);
      std::vector<float> want = gemm_oracle(a, b_nn, c.m, c.k, c.n, 'n');
      for (auto& w : want) w += 1.0f;
      expect_close(acc, want, 1e-5);
    }
  }
  kernels::select(kernels::Backend::kAuto);
}
