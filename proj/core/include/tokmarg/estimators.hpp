#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tokmarg/bigint.hpp"
#include "tokmarg/scorer.hpp"
#include "tokmarg/vocab.hpp"

namespace tokmarg {

enum class Method { kCanonical, kExact, kLattice, kImportance, kRejection };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);

// One text to marginalize, after an optional token context. `canonical`
// overrides the vocabulary's canonical policy (required for `external`).
struct EstimateInput {
  Tokenization context;
  std::string text;
  std::optional<Tokenization> canonical;
};

struct EstimatorParams {
  std::size_t k = 1000;
  // Length bound for lattice sampling and exact enumeration; nullopt = none.
  std::optional<std::size_t> max_len;
  std::uint64_t seed = 0;
  // Multiply in P(eos | sequence). Rejection sampling forces this on.
  bool include_eos = false;
  // Importance sampling: estimate the non-canonical marginal by discarding
  // canonical draws and reweighting by 1 / (1 - q(canonical)).
  bool exclude_canonical = true;
  // Importance sampling: also apply the length bound to the proxy mask.
  bool proxy_length_bound = false;
  // Lattice sampling: cap the off-by-one seed set at k sequences.
  bool strict_k = false;
  // Exact enumeration refuses lattices with more paths than this.
  std::size_t exact_limit = 1'000'000;
};

// Log-domain values. log_estimate is the non-canonical marginal unless
// estimate_target is "full" (plain importance sampling); log_full adds the
// canonical probability in the non-canonical case.
struct EstimateReport {
  Method method = Method::kCanonical;
  std::string estimate_target = "non-canonical";
  double log_estimate = 0.0;
  double log_canonical = 0.0;
  double log_full = 0.0;
  std::size_t k = 0;
  std::size_t distinct_sequences = 0;
  std::optional<std::size_t> max_len;
  std::uint64_t seed = 0;
  bool include_eos = false;
  double wall_time_ms = 0.0;
  std::uint64_t scorer_calls = 0;
  std::uint64_t generation_steps = 0;
  std::uint64_t scored_sequences = 0;
  bool lower_bound_certified = false;
  BigInt num_paths = 0;
  Tokenization canonical;
  // Rejection sampling only: accepted / k over all draws.
  std::optional<double> acceptance_rate;
  std::string rng;
};

// Canonical tokenization for the input (supplied or from the policy), checked
// to be a tokenization of the text.
Tokenization resolve_canonical(const Vocabulary& vocab, const EstimateInput& input);

EstimateReport estimate_canonical(const Scorer& scorer, const Vocabulary& vocab,
                                  const EstimateInput& input, const EstimatorParams& params);

// Sums every path (of length <= max_len, when set). Throws LimitError when
// the path count exceeds params.exact_limit.
EstimateReport estimate_exact(const Scorer& scorer, const Vocabulary& vocab,
                              const EstimateInput& input, const EstimatorParams& params);

// Off-by-one seeds plus max(0, k - |seeds|) uniform draws without
// replacement from the remaining bounded lattice, all scored in one batch.
// A certified lower bound, non-decreasing in k for a fixed seed.
EstimateReport estimate_lattice(const Scorer& scorer, const Vocabulary& vocab,
                                const EstimateInput& input, const EstimatorParams& params);

EstimateReport estimate_importance(const Scorer& scorer, const Vocabulary& vocab,
                                   const EstimateInput& input, const EstimatorParams& params);

// params.max_len caps the sampled length (default: text length).
EstimateReport estimate_rejection(const Scorer& scorer, const Vocabulary& vocab,
                                  const EstimateInput& input, const EstimatorParams& params);

EstimateReport estimate(Method method, const Scorer& scorer, const Vocabulary& vocab,
                        const EstimateInput& input, const EstimatorParams& params);

struct Choice {
  std::size_t index = 0;
  std::vector<EstimateReport> reports;
};

// Argmax of log_full (log_canonical for the canonical method); ties go to the
// lowest index. Candidate i uses seed derive(params.seed, i).
// Throws ValidationError when there are no candidates.
Choice choose(const Scorer& scorer, const Vocabulary& vocab,
              std::span<const EstimateInput> candidates, Method method,
              const EstimatorParams& params);

double choice_score(const EstimateReport& report);

nlohmann::json report_to_json(const EstimateReport& report, bool include_timing = true);

}  // namespace tokmarg
