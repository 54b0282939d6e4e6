#pragma once

#include <cstdint>
#include <string_view>

namespace agentflow {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Seedable splitmix64 generator. All bounded sampling is hand-rolled:
// std::uniform_int_distribution is not specified bit-for-bit across standard
// libraries, and traces must replay byte-identically everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n); n must be nonzero. Rejection sampling, unbiased.
  std::size_t pick(std::size_t n) {
    const std::uint64_t bound = n;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  double real01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double real(double lo, double hi) { return lo + (hi - lo) * real01(); }

  bool chance(double p) { return real01() < p; }

  // Derived stream for a named component. Depends only on the original seed
  // and the label, never on draw order, so agent iteration order is free.
  Rng stream(std::string_view label) const {
    return Rng(seed_ ^ fnv1a64(label));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

}  // namespace agentflow
