#pragma once

#include <cmath>
#include <cstdint>

namespace vqtok {

/// PCG32 generator (O'Neill's pcg32, fixed stream). All randomness in the
/// project flows through this type so that runs are reproducible from a seed
/// alone and generator state can be checkpointed as two u64 words.
class Rng {
 public:
  struct State {
    uint64_t state = 0;
    uint64_t inc = 0;
  };

  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    s_.state = 0u;
    s_.inc = (0x14057b7ef767814fULL << 1u) | 1u;
    next_u32();
    s_.state += seed;
    next_u32();
  }

  uint32_t next_u32() {
    uint64_t old = s_.state;
    s_.state = old * 6364136223846793005ULL + s_.inc;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  uint64_t next_u64() {
    uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform in [0, 1).
  double next_double() { return next_u32() * (1.0 / 4294967296.0); }

  float next_float() { return static_cast<float>(next_double()); }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Unbiased uniform integer in [0, bound). bound must be > 0.
  uint32_t below(uint32_t bound) {
    uint32_t threshold = (0u - bound) % bound;
    for (;;) {
      uint32_t r = next_u32();
      if (r >= threshold) return r % bound;
    }
  }

  /// Standard normal via Box-Muller. Stateless between calls (no cached
  /// spare), so generator state is exactly the two PCG words.
  float gaussian() {
    double u1 = 0.0;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    return static_cast<float>(r * std::cos(6.283185307179586 * u2));
  }

  float gaussian(float mean, float stddev) { return mean + stddev * gaussian(); }

  State state() const { return s_; }
  void set_state(const State& s) { s_ = s; }

 private:
  State s_;
};

}  // namespace vqtok
