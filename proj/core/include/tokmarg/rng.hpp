#pragma once

#include <cstdint>
#include <string_view>

#include "tokmarg/bigint.hpp"

namespace tokmarg {

// SplitMix64 (Steele, Lea & Flood 2014): the i-th output is
// mix(seed + i * 0x9e3779b97f4a7c15). Counter-based, so streams are
// bit-identical on every platform.
class SplitMix64 {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64/1";

  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [0, bound) by rejection from ceil(log2 bound)-bit strings.
  std::uint64_t below(std::uint64_t bound);
  BigInt below(const BigInt& bound);

  // Independent stream for sub-task `index`.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t index) {
    return mix(seed ^ mix(index + 0x632be59bd9b4e019ULL));
  }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

}  // namespace tokmarg
