#include "tokmarg/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "tokmarg/error.hpp"
#include "tokmarg/lattice.hpp"
#include "tokmarg/proxy.hpp"
#include "tokmarg/rng.hpp"

namespace tokmarg {

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman_rho(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ValidationError("spearman_rho: length mismatch");
  if (xs.size() < 2) throw ValidationError("spearman_rho: needs at least two points");
  for (double v : xs) {
    if (std::isnan(v)) throw ValidationError("spearman_rho: NaN input");
  }
  for (double v : ys) {
    if (std::isnan(v)) throw ValidationError("spearman_rho: NaN input");
  }
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ValidationError("undefined correlation: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

bool is_underestimated(const EstimateReport& importance, const EstimateReport& lattice) {
  if (importance.k != lattice.k) {
    throw ValidationError("underestimation is only defined for estimates with equal k");
  }
  return importance.log_full < lattice.log_full;
}

UnderestimationSummary underestimation_study(const Scorer& scorer, const Vocabulary& vocab,
                                             std::span<const StudyInput> inputs,
                                             const EstimatorParams& params, std::size_t jobs) {
  if (inputs.empty()) throw ValidationError("underestimation study needs at least one input");
  UnderestimationSummary summary;
  summary.records.resize(inputs.size());

  auto run_one = [&](std::size_t i) {
    EstimatorParams p = params;
    p.seed = SplitMix64::derive(params.seed, i);
    p.exclude_canonical = true;
    ComparisonRecord rec;
    rec.id = inputs[i].id;
    rec.reports.push_back(estimate_lattice(scorer, vocab, inputs[i].input, p));
    rec.reports.push_back(estimate_importance(scorer, vocab, inputs[i].input, p));
    rec.underestimated = is_underestimated(rec.reports[1], rec.reports[0]);
    summary.records[i] = std::move(rec);
  };

  jobs = std::max<std::size_t>(1, std::min(jobs, inputs.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < inputs.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < inputs.size(); i = next++) {
          try {
            run_one(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    if (error) std::rethrow_exception(error);
  }

  for (const auto& rec : summary.records) summary.underestimated += rec.underestimated ? 1 : 0;
  summary.percentage = 100.0 * static_cast<double>(summary.underestimated) /
                       static_cast<double>(summary.records.size());
  return summary;
}

PqRanking pq_ranking_study(const Scorer& scorer, const Vocabulary& vocab,
                           const EstimateInput& input, std::size_t num_sequences,
                           std::uint64_t seed, std::size_t attempts_factor) {
  const Lattice lattice = build_lattice(vocab, input.text);
  const ProxyDistribution proxy(scorer, lattice);
  PqRanking out;
  std::vector<Tokenization> sequences;

  if (count_paths(lattice) <= num_sequences) {
    out.exhaustive = true;
    sequences = enumerate_paths(BoundedLattice(lattice, lattice.size()), num_sequences);
    for (const auto& s : sequences) out.log_q.push_back(proxy.logprob(input.context, s).log_q);
  } else {
    std::set<Tokenization> seen;
    const std::size_t attempts = attempts_factor * num_sequences;
    for (std::size_t i = 0; i < attempts && sequences.size() < num_sequences; ++i) {
      ProxyPath path = proxy.sample(input.context, SplitMix64::derive(seed, i));
      if (!seen.insert(path.tokens).second) continue;
      out.log_q.push_back(path.log_q);
      sequences.push_back(std::move(path.tokens));
    }
  }
  out.num_sequences = sequences.size();
  out.log_p = scorer.score(input.context, sequences, false);
  out.rho = spearman_rho(out.log_p, out.log_q);
  return out;
}

TimingResult timing_study(const Scorer& scorer, const Vocabulary& vocab,
                          const EstimateInput& input, std::size_t k,
                          std::optional<std::size_t> max_len, std::uint64_t seed) {
  using Clock = std::chrono::steady_clock;
  TimingResult out;
  out.n = input.text.size();
  out.k = k;

  EstimatorParams params;
  params.k = k;
  params.max_len = max_len;
  params.seed = seed;

  // Fresh instrumentation per method; nothing is cached across them.
  {
    InstrumentedScorer counted(scorer);
    const auto start = Clock::now();
    estimate_lattice(counted, vocab, input, params);
    out.score_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    out.score_calls = counted.score_calls();
    out.scored_sequences = counted.scored_sequences();
  }
  {
    InstrumentedScorer counted(scorer);
    const Lattice lattice = build_lattice(vocab, input.text);
    const auto start = Clock::now();
    const ProxyDistribution proxy(counted, lattice);
    for (std::size_t i = 0; i < k; ++i) proxy.sample(input.context, SplitMix64::derive(seed, i));
    out.gen_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    out.generation_steps = counted.generation_steps();
  }
  out.speedup = out.score_ms > 0.0 ? out.gen_ms / out.score_ms : 0.0;
  return out;
}

nlohmann::json record_to_json(const ComparisonRecord& record, bool include_timing) {
  nlohmann::json doc;
  doc["id"] = record.id;
  auto& reports = doc["reports"] = nlohmann::json::array();
  for (const auto& r : record.reports) reports.push_back(report_to_json(r, include_timing));
  doc["underestimated"] = record.underestimated;
  doc["spearman_rho"] =
      record.spearman_rho ? nlohmann::json(*record.spearman_rho) : nlohmann::json(nullptr);
  return doc;
}

nlohmann::json timing_to_json(const TimingResult& result) {
  return nlohmann::json{{"n", result.n},
                        {"k", result.k},
                        {"score_ms", result.score_ms},
                        {"gen_ms", result.gen_ms},
                        {"speedup", result.speedup},
                        {"score_calls", result.score_calls},
                        {"scored_sequences", result.scored_sequences},
                        {"generation_steps", result.generation_steps}};
}

}  // namespace tokmarg
