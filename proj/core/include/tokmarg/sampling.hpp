#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "tokmarg/bigint.hpp"
#include "tokmarg/lattice.hpp"
#include "tokmarg/rng.hpp"

namespace tokmarg {

// The length bound is the BoundedLattice's; the support is its paths minus
// `exclude`.
struct SampleSpec {
  std::size_t k = 0;
  std::vector<Tokenization> exclude;
  std::uint64_t seed = 0;
  bool with_replacement = false;
};

// Ranks of the excluded paths that lie in the bounded lattice, sorted and
// deduplicated. Paths not in the lattice or longer than the bound are skipped.
std::vector<BigInt> exclusion_indices(const BoundedLattice& lattice,
                                      std::span<const Tokenization> exclude);

// Draws distinct uniform values from [1, total] minus a sorted excluded set,
// one at a time, via a sparse Fisher-Yates shuffle. The first k draws are a
// uniformly random k-subset in uniformly random order for every k, so sample
// sets of a fixed seed are nested across k.
class DistinctIndexSampler {
 public:
  DistinctIndexSampler(BigInt total, std::vector<BigInt> excluded, std::uint64_t seed);

  const BigInt& support_size() const { return support_; }
  const BigInt& drawn() const { return drawn_; }
  bool exhausted() const { return drawn_ == support_; }

  // Next rank in [1, total]. Throws ValidationError once exhausted.
  BigInt next();

 private:
  BigInt slot(const BigInt& position) const;

  std::vector<BigInt> excluded_;
  BigInt support_;
  BigInt drawn_ = 0;
  std::map<BigInt, BigInt> displaced_;
  SplitMix64 rng_;
};

// Maps j in [1, total - |excluded|] to the j-th rank not in `excluded`.
BigInt nth_included(const BigInt& j, std::span<const BigInt> excluded_sorted);

// Uniform paths of the bounded lattice outside spec.exclude; i.i.d. with
// replacement, otherwise a uniformly random k-subset in draw order.
// Throws ValidationError when the support is empty (and k > 0) or, without
// replacement, when k exceeds the support size.
std::vector<Tokenization> sample_uniform(const BoundedLattice& lattice, const SampleSpec& spec);

}  // namespace tokmarg
