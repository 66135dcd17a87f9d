#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace kws {

// Deterministic random source. mt19937_64 is fully specified by the C++
// standard, and every derived draw below is computed with explicit integer
// arithmetic, so identical seeds give identical streams on every platform.
// std::uniform_real_distribution / std::shuffle are implementation-defined
// and must not be used anywhere results have to reproduce.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Bias from the multiply-shift mapping is
  // below 2^-64 per draw, far under anything observable here.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Fisher-Yates, consuming one bounded draw per position from the end.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace kws
