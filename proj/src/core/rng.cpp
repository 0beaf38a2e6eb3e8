#include "core/rng.hpp"

#include <cmath>
#include <sstream>

#include "core/check.hpp"

namespace flowvid {

namespace {

uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t sm = seed;
  for (auto& w : s_) w = splitmix64(sm);
}

uint64_t Rng::next_u64() {
  const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

float Rng::uniform() {
  // 24 mantissa bits -> exactly representable in float, value in [0,1)
  return (float)(next_u64() >> 40) * (1.0f / 16777216.0f);
}

float Rng::uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
  FV_CHECK(hi >= lo, "uniform_int: empty range [" << lo << "," << hi << "]");
  uint64_t span = (uint64_t)(hi - lo) + 1;
  return lo + (int)(next_u64() % span);
}

float Rng::normal() {
  // u1 in (0,1]: shift by one ulp step so log never sees zero
  float u1 = ((float)(next_u64() >> 40) + 1.0f) * (1.0f / 16777216.0f);
  float u2 = uniform();
  float r = std::sqrt(-2.0f * std::log(u1));
  return r * std::cos(6.28318530717958647692f * u2);
}

void Rng::fill_normal(float* dst, size_t n, float stdev) {
  for (size_t i = 0; i < n; ++i) dst[i] = normal() * stdev;
}

void Rng::fill_uniform(float* dst, size_t n, float lo, float hi) {
  for (size_t i = 0; i < n; ++i) dst[i] = uniform(lo, hi);
}

std::string Rng::encode_state() const {
  std::ostringstream os;
  os << s_[0] << " " << s_[1] << " " << s_[2] << " " << s_[3];
  return os.str();
}

void Rng::decode_state(const std::string& text) {
  std::istringstream is(text);
  std::array<uint64_t, 4> s;
  FV_CHECK((is >> s[0] >> s[1] >> s[2] >> s[3]).good() || is.eof(),
           "bad rng state string: '" << text << "'");
  s_ = s;
}

}  // namespace flowvid
