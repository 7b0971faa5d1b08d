#pragma once

#include <cstddef>
#include <cstdint>

namespace uaseg {

// SplitMix64: state += 0x9e3779b97f4a7c15, then the standard 64-bit finaliser.
// Seed 0 yields 0xe220a8397b1dcdaf, 0x6e789e6aa1b965f4, ...
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();
  // Top 53 bits scaled to [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n); n > 0.
  std::size_t below(std::size_t n);
  // Standard normal via Box-Muller, one draw per call (two uniforms).
  double normal();

 private:
  std::uint64_t state_;
};

// Independent stream derived from (seed, stream id).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace uaseg
