#pragma once

#include <cstdint>
#include <random>

namespace wmvac {

// splitmix64 step; used to hash seeds and derive independent streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives a stream seed from a master seed and up to three tags.
// Image index and purpose tags go here so that every sampled object is a
// pure function of (master seed, index, purpose) regardless of worker
// scheduling or how many other objects were drawn.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = splitmix64(master);
  s = splitmix64(s ^ (a + 0x9e3779b97f4a7c15ULL));
  s = splitmix64(s ^ (b + 0xd1b54a32d192ed03ULL));
  s = splitmix64(s ^ (c + 0x8cb92ba72f3d8dd7ULL));
  return s;
}

// Deterministic RNG. mt19937 output is fully specified by the standard and
// the float helpers below avoid std::uniform_real_distribution, whose exact
// results are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(static_cast<std::uint32_t>(splitmix64(seed))) {}

  std::uint32_t next_u32() { return gen_(); }

  // Uniform in [0, 1) with 24 bits of mantissa.
  float uniform() { return static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f); }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi) {
    if (hi <= lo) return lo;
    const std::uint64_t span = static_cast<std::uint64_t>(hi) - lo + 1;
    return lo + static_cast<int>((static_cast<std::uint64_t>(gen_()) * span) >> 32);
  }

  bool coin() { return (gen_() & 1u) != 0; }

 private:
  std::mt19937 gen_;
};

}  // namespace wmvac
