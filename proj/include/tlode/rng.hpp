#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

namespace tlode {

// xoshiro256++ with splitmix64 seeding. Chosen over std engines because the
// distributions in <random> are implementation-defined; this generator gives
// bit-identical streams on every platform for a given 64-bit seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 bits of randomness.
  double uniform01();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller (two uniforms per pair, cached).
  double normal();
  // Uniform integer in [0, n). n must be > 0.
  std::size_t index(std::size_t n);

  std::vector<double> uniform_vec(std::size_t n, double lo, double hi);

  // Derive an independent stream (for parallel workers / sub-tasks).
  Rng split();

 private:
  std::uint64_t s_[4];
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace tlode
