#pragma once

#include <cstdint>

namespace ckfr {

// PCG32 (XSH-RR 64/32). Every stochastic component takes an explicit stream so
// results are bit-reproducible across platforms and thread counts.
class Pcg32 {
 public:
  Pcg32() : Pcg32(0x853c49e6748fea9bULL, 0xda3e39cb94b95bdbULL) {}

  Pcg32(uint64_t seed, uint64_t stream) {
    state_ = 0u;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  uint32_t next_u32() {
    const uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    const uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    const uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  // Uniform in [0, 1), 32 bits of entropy.
  double next_double() { return next_u32() * 0x1p-32; }

  // Uniform in [lo, hi).
  double next_range(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform index in [0, n). Lemire multiply-shift; bias is < 2^-32 per draw,
  // which is irrelevant at the sample counts used here and keeps draws O(1).
  uint32_t next_below(uint32_t n) {
    return static_cast<uint32_t>((static_cast<uint64_t>(next_u32()) * n) >> 32);
  }

  bool next_bernoulli(double p) { return next_double() < p; }

 private:
  uint64_t state_;
  uint64_t inc_;
};

// Fixed stream ids for the independent PRNG streams derived from one run seed.
// Keeping them disjoint means e.g. disabling the triplet stream cannot shift
// batch shuffling or augmentation draws.
namespace rng_stream {
inline constexpr uint64_t kInit = 1;
inline constexpr uint64_t kBatch = 2;
inline constexpr uint64_t kAugment = 3;
inline constexpr uint64_t kTriplet = 4;
inline constexpr uint64_t kDropout = 5;
inline constexpr uint64_t kSynth = 6;
}  // namespace rng_stream

}  // namespace ckfr
