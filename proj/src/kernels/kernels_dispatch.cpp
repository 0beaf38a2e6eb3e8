#include "kernels/kernels.hpp"

#include <stdexcept>

namespace flowvid {
namespace kernels {

const Kernels* avx2_build();  // null when not compiled in

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Kernels* avx2_if_usable() {
  const Kernels* k = avx2_build();
  if (k && cpu_has_avx2()) return k;
  return nullptr;
}

struct State {
  Backend choice = Backend::kAuto;
  const Kernels* table = nullptr;
};

State& state() {
  static State s;
  if (!s.table) {
    const Kernels* simd = avx2_if_usable();
    s.table = simd ? simd : &scalar();
  }
  return s;
}

}  // namespace

const Kernels& active() { return *state().table; }

Backend selected() { return state().choice; }

void select(Backend b) {
  State& s = state();
  switch (b) {
    case Backend::kAuto: {
      const Kernels* simd = avx2_if_usable();
      s.table = simd ? simd : &scalar();
      break;
    }
    case Backend::kScalar:
      s.table = &scalar();
      break;
    case Backend::kAvx2: {
      const Kernels* simd = avx2_if_usable();
      if (!simd) throw std::runtime_error("avx2 kernels unavailable on this cpu/build");
      s.table = simd;
      break;
    }
  }
  s.choice = b;
}

std::vector<std::string> available() {
  std::vector<std::string> out = {"scalar"};
  if (avx2_if_usable()) out.push_back("avx2");
  return out;
}

}  // namespace kernels
}  // namespace flowvid
