#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "core/ops.hpp"
#include "core/param.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "test_util.hpp"

using namespace flowvid;

TEST_CASE("tensor construction and accessors") {
  Tensor t({2, 3}, 0.5f);
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 0.5f);
  t.set({0, 1}, -1.0f);
  CHECK(t.at({0, 1}) == -1.0f);
  CHECK_THROWS(t.at({2, 0}));
  CHECK_THROWS((void)Tensor::from({2, 2}, {1.0f, 2.0f, 3.0f}));
}

TEST_CASE("reshape shares storage, clone does not") {
  Tensor t({2, 3}, 1.0f);
  Tensor r = t.reshaped({3, 2});
  r.set({0, 0}, 9.0f);
  CHECK(t.at({0, 0}) == 9.0f);
  CHECK(t.storage_id() == r.storage_id());
  Tensor c = t.clone();
  c.set({0, 0}, 5.0f);
  CHECK(t.at({0, 0}) == 9.0f);
  CHECK_THROWS((void)t.reshaped({4, 2}));
}

TEST_CASE("ten file round trip preserves bytes and shape") {
  Rng rng(3);
  Tensor t = Tensor::randn({3, 4, 5}, rng);
  const std::string path = "/tmp/fv_test_tensor.ten";
  write_ten(path, t);
  Tensor back = read_ten(path);
  CHECK(back.shape() == t.shape());
  CHECK(testutil::bitwise_equal(t, back));

  // corrupt the magic
  FILE* f = std::fopen(path.c_str(), "r+b");
  std::fputc('X', f);
  std::fclose(f);
  CHECK_THROWS_WITH_AS(read_ten(path), doctest::Contains("magic"), std::runtime_error);
}

TEST_CASE("shape mismatch errors name both shapes") {
  Tensor a({2, 3});
  Tensor b({3, 2});
  CHECK_THROWS_WITH_AS(ops::add(a, b), doctest::Contains("[2,3]"), std::runtime_error);
  CHECK_THROWS_WITH_AS(ops::add(a, b), doctest::Contains("[3,2]"), std::runtime_error);
  Tensor c({4, 5});
  CHECK_THROWS_WITH_AS(ops::matmul(a, c), doctest::Contains("[2,3]"), std::runtime_error);
}

TEST_CASE("select_by_mask keeps bits and broadcasts over channels") {
  Rng rng(5);
  Tensor a = Tensor::randn({2, 3, 4, 4}, rng);
  Tensor b = Tensor::randn({2, 3, 4, 4}, rng);
  Tensor m({2, 1, 4, 4});
  for (size_t i = 0; i < m.numel(); ++i) m.data()[i] = (i % 3 == 0) ? 1.0f : 0.0f;
  Tensor y = ops::select_by_mask(m, a, b);
  const size_t hw = 16;
  for (int bi = 0; bi < 2; ++bi)
    for (int c = 0; c < 3; ++c)
      for (size_t p = 0; p < hw; ++p) {
        const float want = m.data()[bi * hw + p] > 0.5f ? a.data()[(bi * 3 + c) * hw + p]
                                                        : b.data()[(bi * 3 + c) * hw + p];
        CHECK(y.data()[(bi * 3 + c) * hw + p] == want);
      }
}

TEST_CASE("finite checks flag NaN when enabled") {
  set_finite_checks(true);
  Tensor a({4}, 1.0f);
  Tensor b({4}, 2.0f);
  CHECK_NOTHROW(ops::add(a, b));
  b.data()[2] = std::nanf("");
  CHECK_THROWS(ops::add(a, b));
  set_finite_checks(false);
  CHECK_NOTHROW(ops::add(a, b));
}

TEST_CASE("param store groups and trainability flags") {
  ParamStore ps;
  Rng rng(1);
  Tensor w = ps.add("w", ParamGroup::kMotion, Tensor::randn({3, 3}, rng));
  Tensor v = ps.add("v", ParamGroup::kSpatial, Tensor::randn({2}, rng));
  CHECK_THROWS(ps.add("w", ParamGroup::kMotion, Tensor({1})));
  CHECK(w.requires_grad());
  ps.set_trainable(ParamGroup::kMotion, false);
  CHECK(!w.requires_grad());
  CHECK(v.requires_grad());
  CHECK(ps.total_params() == 11);
}

TEST_CASE("frozen group parameters are bit-identical across optimizer steps") {
  ParamStore ps;
  Rng rng(2);
  Tensor frozen = ps.add("frozen", ParamGroup::kSpatial, Tensor::randn({8}, rng));
  Tensor live = ps.add("live", ParamGroup::kMotion, Tensor::randn({8}, rng));
  ps.set_trainable(ParamGroup::kSpatial, false);
  Tensor frozen_before = frozen.clone();
  Adam opt(ps, 1e-2f);
  for (int i = 0; i < 100; ++i) {
    Tape::instance().clear();
    Tensor loss = ops::mse_loss(ops::add(frozen, live), Tensor({8}, 1.0f));
    Tape::instance().backward(loss);
    Tape::instance().clear();
    opt.step();
    ps.zero_grads();
  }
  CHECK(testutil::bitwise_equal(frozen, frozen_before));
  CHECK(!testutil::bitwise_equal(live, Tensor::zeros({8})));
  CHECK(!frozen.has_grad());
}
