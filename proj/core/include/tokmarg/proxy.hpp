#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tokmarg/lattice.hpp"
#include "tokmarg/scorer.hpp"
#include "tokmarg/vocab.hpp"

namespace tokmarg {

// Result of following one path through the proxy: the path, its model
// log-probability log p, its proxy log-probability log q, and the per-step
// log normalizers log z_i, so that log p - log q == sum(log z_i).
struct ProxyPath {
  Tokenization tokens;
  double log_p = 0.0;
  double log_q = 0.0;
  std::vector<double> log_normalizers;
};

// Model distribution restricted, step by step, to the arcs leaving the
// current lattice state and renormalized over them. When a length bound is
// set, only arcs from which the final state is still reachable within the
// remaining budget are allowed, so sampling never dead-ends.
class ProxyDistribution {
 public:
  ProxyDistribution(const Scorer& scorer, const Lattice& lattice,
                    std::optional<std::size_t> max_len = std::nullopt);

  const Lattice& lattice() const { return bounded_.base(); }
  const BoundedLattice& bounded() const { return bounded_; }

  // Teacher-forced: one batched next_logprobs call over all prefixes.
  // Throws ValidationError if `tokens` is not an allowed path.
  ProxyPath logprob(std::span<const TokenId> context, std::span<const TokenId> tokens) const;

  // Ancestral sampling; one sequential next_logprobs call per emitted token.
  ProxyPath sample(std::span<const TokenId> context, std::uint64_t seed) const;

 private:
  struct Step {
    std::vector<const Lattice::Arc*> allowed;
    double log_z;
  };
  Step step(std::size_t pos, std::size_t budget, std::span<const double> logprobs) const;

  const Scorer& scorer_;
  BoundedLattice bounded_;
};

struct RejectionDraw {
  bool accepted = false;
  Tokenization tokens;  // without the end-of-sequence symbol
  std::size_t steps = 0;
};

// Unconstrained ancestral sampling with end-of-sequence, up to max_len tokens;
// accepted iff end-of-sequence is drawn and the tokens detokenize to `target`.
// A draw stops early once its detokenization stops being a prefix of the
// target, which leaves the acceptance probability unchanged.
RejectionDraw rejection_sample(const Scorer& scorer, const Vocabulary& vocab,
                               std::span<const TokenId> context, std::string_view target,
                               std::size_t max_len, std::uint64_t seed);

}  // namespace tokmarg
