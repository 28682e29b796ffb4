#pragma once

#include <cstdint>
#include <random>

namespace gfusion {

// Seedable 64-bit generator with fully specified derived draws.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The derived distributions below are implemented here instead of
// using <random> distributions (whose algorithms are implementation-defined)
// so that every draw is reproducible across standard libraries:
//
//   uniform01()      (next() >> 11) * 2^-53, in [0, 1)
//   below(n)         rejection sampling on next() to remove modulo bias
//   coin()           top bit of next()
//   gaussian()       Marsaglia polar method; the second variate of each pair
//                    is cached and returned by the following call
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  double uniform01() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  std::uint64_t below(std::uint64_t n);

  bool coin() { return (next() >> 63) != 0; }

  double gaussian();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finalizer, used to derive independent stream seeds from one
// user seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace gfusion
