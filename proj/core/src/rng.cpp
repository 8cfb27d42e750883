#include "tokmarg/rng.hpp"

#include <bit>
#include <stdexcept>

namespace tokmarg {

std::uint64_t SplitMix64::below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("SplitMix64::below: empty range");
  if (bound == 1) return 0;
  const int bits = 64 - std::countl_zero(bound - 1);
  const std::uint64_t mask = bits == 64 ? ~0ULL : ((1ULL << bits) - 1);
  for (;;) {
    const std::uint64_t x = next() & mask;
    if (x < bound) return x;
  }
}

BigInt SplitMix64::below(const BigInt& bound) {
  if (bound <= 0) throw std::invalid_argument("SplitMix64::below: empty range");
  if (bound <= BigInt(~0ULL)) {
    return BigInt(below(bound.convert_to<std::uint64_t>()));
  }
  const std::size_t bits = boost::multiprecision::msb(BigInt(bound - 1)) + 1;
  const std::size_t words = (bits + 63) / 64;
  const std::size_t top_bits = bits - (words - 1) * 64;
  const std::uint64_t top_mask = top_bits == 64 ? ~0ULL : ((1ULL << top_bits) - 1);
  for (;;) {
    BigInt x = 0;
    // Most significant word first.
    for (std::size_t w = 0; w < words; ++w) {
      std::uint64_t word = next();
      if (w == 0) word &= top_mask;
      x <<= 64;
      x |= word;
    }
    if (x < bound) return x;
  }
}

}  // namespace tokmarg
