#pragma once
#include <cstdint>
#include <random>

namespace ssc {

// Thin wrapper around mt19937_64 that derives all values from raw 64-bit
// draws. std::uniform_real_distribution and friends are implementation
// defined, so going through the raw engine keeps generated data identical
// across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1) with 53 bits of randomness
  double uniform() {
    return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(engine_() % static_cast<uint64_t>(n));
  }

  bool coin() { return uniform() < 0.5; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ssc
