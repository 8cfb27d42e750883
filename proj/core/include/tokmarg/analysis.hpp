#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tokmarg/estimators.hpp"

namespace tokmarg {

// Spearman rank correlation with average ranks for ties. Throws
// ValidationError on length mismatch, fewer than two points, or a constant
// input ("undefined correlation").
double spearman_rho(std::span<const double> xs, std::span<const double> ys);

// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

struct StudyInput {
  std::string id;
  EstimateInput input;
};

struct ComparisonRecord {
  std::string id;
  std::vector<EstimateReport> reports;
  // Importance sampling's full marginal fell below the lattice lower bound.
  bool underestimated = false;
  std::optional<double> spearman_rho;
};

// Throws ValidationError unless both ran with the same k.
bool is_underestimated(const EstimateReport& importance, const EstimateReport& lattice);

struct UnderestimationSummary {
  std::vector<ComparisonRecord> records;
  std::size_t underestimated = 0;
  double percentage = 0.0;
};

// Lattice vs non-canonical importance sampling with identical k on every
// input; `jobs` inputs run concurrently.
UnderestimationSummary underestimation_study(const Scorer& scorer, const Vocabulary& vocab,
                                             std::span<const StudyInput> inputs,
                                             const EstimatorParams& params,
                                             std::size_t jobs = 1);

struct PqRanking {
  double rho = 0.0;
  std::size_t num_sequences = 0;
  // All lattice paths were used instead of sampling.
  bool exhaustive = false;
  std::vector<double> log_p;
  std::vector<double> log_q;
};

// Rank correlation between log p and log q over up to num_sequences unique
// tokenizations: every path when the lattice has no more than that, else
// unique proxy samples (at most attempts_factor * num_sequences draws).
PqRanking pq_ranking_study(const Scorer& scorer, const Vocabulary& vocab,
                           const EstimateInput& input, std::size_t num_sequences,
                           std::uint64_t seed, std::size_t attempts_factor = 20);

struct TimingResult {
  std::size_t n = 0;
  std::size_t k = 0;
  double score_ms = 0.0;
  double gen_ms = 0.0;
  double speedup = 0.0;
  std::uint64_t score_calls = 0;
  std::uint64_t scored_sequences = 0;
  std::uint64_t generation_steps = 0;
};

// (a) lattice sampling + batched scoring of k sequences against (b) k
// sequentially generated proxy samples; speedup = gen_ms / score_ms.
TimingResult timing_study(const Scorer& scorer, const Vocabulary& vocab,
                          const EstimateInput& input, std::size_t k,
                          std::optional<std::size_t> max_len, std::uint64_t seed);

nlohmann::json record_to_json(const ComparisonRecord& record, bool include_timing = true);
nlohmann::json timing_to_json(const TimingResult& result);

}  // namespace tokmarg
