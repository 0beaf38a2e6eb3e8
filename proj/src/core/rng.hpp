#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace flowvid {

// xoshiro256++ with splitmix64 seeding. Gaussian draws use Box-Muller and
// keep no cached spare, so the four state words alone determine every future
// sample; that makes checkpoint/resume exact.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0);

  uint64_t next_u64();
  float uniform();                  // [0, 1)
  float uniform(float lo, float hi);
  int uniform_int(int lo, int hi);  // inclusive bounds
  float normal();
  void fill_normal(float* dst, size_t n, float stdev = 1.0f);
  void fill_uniform(float* dst, size_t n, float lo, float hi);

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }
  std::string encode_state() const;
  void decode_state(const std::string& text);

 private:
  std::array<uint64_t, 4> s_{};
};

}  // namespace flowvid
