#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace simmil {

// Counter-based random stream. Each stream is identified by a 64-bit key
// derived from a seed plus an arbitrary list of tag/index components, and
// draws are a pure function of (key, counter). Streams built from the same
// components always replay the same sequence, and distinct streams can be
// consumed from different threads without any shared state.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : key_(mix64(seed ^ kGamma)) {}

  RngStream derive(std::string_view tag, uint64_t a = 0, uint64_t b = 0) const {
    RngStream s(0);
    s.key_ = mix64(key_ ^ mix64(hash_bytes(tag) ^ mix64(a ^ mix64(b ^ kGamma))));
    s.counter_ = 0;
    return s;
  }

  uint64_t next_u64() {
    counter_ += kGamma;
    return mix64(key_ ^ counter_);
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  float uniform_f() { return float(next_u64() >> 40) * 0x1.0p-24f; }

  // uniform integer in [0, n), n > 0
  uint64_t uniform_int(uint64_t n) {
    return uint64_t((__uint128_t(next_u64()) * n) >> 64);
  }

  // standard normal via Box-Muller
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  static uint64_t hash_bytes(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  static constexpr uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  static uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace simmil
