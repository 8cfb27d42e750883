#include "tokmarg/sampling.hpp"

#include <algorithm>

#include "tokmarg/error.hpp"

namespace tokmarg {

std::vector<BigInt> exclusion_indices(const BoundedLattice& lattice,
                                      std::span<const Tokenization> exclude) {
  std::vector<BigInt> out;
  for (const auto& path : exclude) {
    if (path.size() > lattice.max_len() || !contains(lattice.base(), path)) continue;
    out.push_back(rank(lattice, path));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

BigInt nth_included(const BigInt& j, std::span<const BigInt> excluded_sorted) {
  BigInt r = j;
  for (const auto& e : excluded_sorted) {
    if (e <= r) {
      ++r;
    } else {
      break;
    }
  }
  return r;
}

DistinctIndexSampler::DistinctIndexSampler(BigInt total, std::vector<BigInt> excluded,
                                           std::uint64_t seed)
    : excluded_(std::move(excluded)), rng_(seed) {
  std::sort(excluded_.begin(), excluded_.end());
  excluded_.erase(std::unique(excluded_.begin(), excluded_.end()), excluded_.end());
  for (const auto& e : excluded_) {
    if (e < 1 || e > total) throw ValidationError("excluded index out of range");
  }
  support_ = total - BigInt(excluded_.size());
}

BigInt DistinctIndexSampler::slot(const BigInt& position) const {
  auto it = displaced_.find(position);
  return it == displaced_.end() ? position : it->second;
}

BigInt DistinctIndexSampler::next() {
  if (exhausted()) {
    throw ValidationError("cannot draw more than " + to_decimal(support_) +
                          " distinct paths from this support");
  }
  // Swap slot `drawn_` with a uniform slot in [drawn_, support_).
  const BigInt pick = drawn_ + rng_.below(BigInt(support_ - drawn_));
  const BigInt value = slot(pick);
  if (pick != drawn_) displaced_[pick] = slot(drawn_);
  displaced_.erase(drawn_);
  ++drawn_;
  return nth_included(value + 1, excluded_);
}

std::vector<Tokenization> sample_uniform(const BoundedLattice& lattice, const SampleSpec& spec) {
  std::vector<Tokenization> out;
  if (spec.k == 0) return out;
  auto excluded = exclusion_indices(lattice, spec.exclude);
  const BigInt support = lattice.num_paths() - BigInt(excluded.size());
  if (support == 0) throw ValidationError("empty support: no paths left to sample");
  out.reserve(spec.k);

  if (spec.with_replacement) {
    SplitMix64 rng(spec.seed);
    for (std::size_t i = 0; i < spec.k; ++i) {
      const BigInt j = rng.below(support) + 1;
      out.push_back(unrank(lattice, nth_included(j, excluded)));
    }
    return out;
  }

  if (BigInt(spec.k) > support) {
    throw ValidationError("k = " + std::to_string(spec.k) + " exceeds the support size " +
                          to_decimal(support) + " for sampling without replacement");
  }
  DistinctIndexSampler sampler(lattice.num_paths(), std::move(excluded), spec.seed);
  for (std::size_t i = 0; i < spec.k; ++i) out.push_back(unrank(lattice, sampler.next()));
  return out;
}

}  // namespace tokmarg
