#include "tokmarg/estimators.hpp"

#include <chrono>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "tokmarg/error.hpp"
#include "tokmarg/lattice.hpp"
#include "tokmarg/logmath.hpp"
#include "tokmarg/neighbors.hpp"
#include "tokmarg/proxy.hpp"
#include "tokmarg/rng.hpp"
#include "tokmarg/sampling.hpp"

namespace tokmarg {
namespace {

using Clock = std::chrono::steady_clock;

// Wraps the caller's scorer for call accounting and times the estimate.
class Run {
 public:
  Run(const Scorer& scorer, Method method, const EstimatorParams& params)
      : scorer_(scorer), start_(Clock::now()) {
    report_.method = method;
    report_.k = params.k;
    report_.max_len = params.max_len;
    report_.seed = params.seed;
    report_.include_eos = params.include_eos;
    report_.rng = std::string(SplitMix64::kAlgorithm);
  }

  const Scorer& scorer() const { return scorer_; }
  EstimateReport& report() { return report_; }

  EstimateReport finish() {
    report_.wall_time_ms =
        std::chrono::duration<double, std::milli>(Clock::now() - start_).count();
    report_.scorer_calls = scorer_.total_calls();
    report_.generation_steps = scorer_.generation_steps();
    report_.scored_sequences = scorer_.scored_sequences();
    return std::move(report_);
  }

 private:
  InstrumentedScorer scorer_;
  Clock::time_point start_;
  EstimateReport report_;
};

double log_mean(std::span<const double> log_values, double count) {
  if (count <= 0) return kNegInf;
  return log_sum_exp(log_values) - std::log(count);
}

}  // namespace

std::string_view to_string(Method method) {
  switch (method) {
    case Method::kCanonical:
      return "canonical";
    case Method::kExact:
      return "exact";
    case Method::kLattice:
      return "lattice";
    case Method::kImportance:
      return "importance";
    case Method::kRejection:
      return "rejection";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::kCanonical, Method::kExact, Method::kLattice, Method::kImportance,
                   Method::kRejection}) {
    if (to_string(m) == name) return m;
  }
  throw ValidationError("unknown method '" + std::string(name) + "'");
}

Tokenization resolve_canonical(const Vocabulary& vocab, const EstimateInput& input) {
  Tokenization canonical =
      input.canonical ? *input.canonical : canonical_tokenize(vocab, input.text);
  if (detokenize(vocab, canonical) != input.text) {
    throw ValidationError("supplied canonical tokenization does not detokenize to the text");
  }
  return canonical;
}

EstimateReport estimate_canonical(const Scorer& scorer, const Vocabulary& vocab,
                                  const EstimateInput& input, const EstimatorParams& params) {
  Run run(scorer, Method::kCanonical, params);
  auto& r = run.report();
  r.k = 0;
  r.canonical = resolve_canonical(vocab, input);
  r.num_paths = count_paths(build_lattice(vocab, input.text));
  r.log_canonical = score_sequence(run.scorer(), input.context, r.canonical, params.include_eos);
  r.log_estimate = kNegInf;
  r.log_full = r.log_canonical;
  r.distinct_sequences = 1;
  return run.finish();
}

EstimateReport estimate_exact(const Scorer& scorer, const Vocabulary& vocab,
                              const EstimateInput& input, const EstimatorParams& params) {
  Run run(scorer, Method::kExact, params);
  auto& r = run.report();
  r.k = 0;
  r.canonical = resolve_canonical(vocab, input);
  Lattice lattice = build_lattice(vocab, input.text);
  const std::size_t bound = params.max_len.value_or(lattice.size());
  BoundedLattice bounded(std::move(lattice), bound);
  r.num_paths = bounded.num_paths();
  if (r.num_paths > params.exact_limit) {
    throw LimitError("exact enumeration over " + to_decimal(r.num_paths) +
                     " paths exceeds the limit " + std::to_string(params.exact_limit));
  }
  std::vector<Tokenization> paths = enumerate_paths(bounded, params.exact_limit);
  std::size_t canonical_at = paths.size();
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (paths[i] == r.canonical) canonical_at = i;
  }
  if (canonical_at == paths.size()) paths.push_back(r.canonical);

  const auto scores = run.scorer().score(input.context, paths, params.include_eos);
  std::vector<double> others;
  others.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != canonical_at) others.push_back(scores[i]);
  }
  r.log_canonical = scores[canonical_at];
  r.log_estimate = log_sum_exp(others);
  r.log_full = log_add_exp(r.log_estimate, r.log_canonical);
  r.distinct_sequences = paths.size();
  r.lower_bound_certified = true;
  return run.finish();
}

EstimateReport estimate_lattice(const Scorer& scorer, const Vocabulary& vocab,
                                const EstimateInput& input, const EstimatorParams& params) {
  Run run(scorer, Method::kLattice, params);
  auto& r = run.report();
  r.canonical = resolve_canonical(vocab, input);
  Lattice lattice = build_lattice(vocab, input.text);
  const std::size_t bound = params.max_len.value_or(lattice.size());
  BoundedLattice bounded(std::move(lattice), bound);
  r.num_paths = bounded.num_paths();

  std::vector<Tokenization> sequences;
  for (auto& member : off_by_one(vocab, r.canonical).members) {
    if (member.size() <= bound) sequences.push_back(std::move(member));
  }
  if (params.strict_k && sequences.size() > params.k) sequences.resize(params.k);
  const std::size_t seeds = sequences.size();

  std::vector<Tokenization> exclude = sequences;
  exclude.push_back(r.canonical);
  DistinctIndexSampler sampler(bounded.num_paths(), exclusion_indices(bounded, exclude),
                               params.seed);
  const std::size_t wanted = params.k > seeds ? params.k - seeds : 0;
  for (std::size_t i = 0; i < wanted && !sampler.exhausted(); ++i) {
    sequences.push_back(unrank(bounded, sampler.next()));
  }
  r.distinct_sequences = sequences.size();

  // One batched scoring call; the canonical rides along at the end.
  sequences.push_back(r.canonical);
  auto scores = run.scorer().score(input.context, sequences, params.include_eos);
  r.log_canonical = scores.back();
  scores.pop_back();
  r.log_estimate = log_sum_exp(scores);
  r.log_full = log_add_exp(r.log_estimate, r.log_canonical);
  r.lower_bound_certified = true;
  return run.finish();
}

EstimateReport estimate_importance(const Scorer& scorer, const Vocabulary& vocab,
                                   const EstimateInput& input, const EstimatorParams& params) {
  if (params.k == 0) throw ValidationError("importance sampling needs k >= 1");
  Run run(scorer, Method::kImportance, params);
  auto& r = run.report();
  r.estimate_target = params.exclude_canonical ? "non-canonical" : "full";
  r.canonical = resolve_canonical(vocab, input);
  const Lattice lattice = build_lattice(vocab, input.text);
  const auto mask_bound = params.proxy_length_bound ? params.max_len : std::nullopt;
  const ProxyDistribution proxy(run.scorer(), lattice, mask_bound);
  r.num_paths = proxy.bounded().num_paths();
  r.log_canonical = score_sequence(run.scorer(), input.context, r.canonical, params.include_eos);

  std::vector<Tokenization> draws;
  std::vector<double> log_weights;
  draws.reserve(params.k);
  log_weights.reserve(params.k);
  for (std::size_t i = 0; i < params.k; ++i) {
    ProxyPath path = proxy.sample(input.context, SplitMix64::derive(params.seed, i));
    log_weights.push_back(path.log_p - path.log_q);
    draws.push_back(std::move(path.tokens));
  }
  if (params.include_eos) {
    std::vector<Tokenization> ends;
    ends.reserve(draws.size());
    for (const auto& d : draws) {
      Tokenization ctx = input.context;
      ctx.insert(ctx.end(), d.begin(), d.end());
      ends.push_back(std::move(ctx));
    }
    const auto dists = run.scorer().next_logprobs_batch(ends);
    for (std::size_t i = 0; i < draws.size(); ++i) log_weights[i] += dists[i][scorer.eos()];
  }

  if (!params.exclude_canonical) {
    r.log_estimate = log_mean(log_weights, static_cast<double>(params.k));
    r.log_full = r.log_estimate;
    r.distinct_sequences = std::set<Tokenization>(draws.begin(), draws.end()).size();
    return run.finish();
  }

  double log_q_canonical = kNegInf;
  if (r.canonical.size() <= proxy.bounded().max_len()) {
    log_q_canonical = proxy.logprob(input.context, r.canonical).log_q;
  }
  // log(1 - q(canonical))
  const double log_rest = std::log(-std::expm1(log_q_canonical));
  std::vector<double> kept;
  std::set<Tokenization> distinct;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    if (draws[i] == r.canonical) continue;
    kept.push_back(log_weights[i]);
    distinct.insert(draws[i]);
  }
  r.distinct_sequences = distinct.size();
  r.log_estimate =
      kept.empty() ? kNegInf : log_rest + log_mean(kept, static_cast<double>(kept.size()));
  r.log_full = log_add_exp(r.log_estimate, r.log_canonical);
  return run.finish();
}

EstimateReport estimate_rejection(const Scorer& scorer, const Vocabulary& vocab,
                                  const EstimateInput& input, const EstimatorParams& params) {
  if (params.k == 0) throw ValidationError("rejection sampling needs k >= 1");
  EstimatorParams forced = params;
  forced.include_eos = true;
  Run run(scorer, Method::kRejection, forced);
  auto& r = run.report();
  r.canonical = resolve_canonical(vocab, input);
  r.num_paths = count_paths(build_lattice(vocab, input.text));
  r.log_canonical = score_sequence(run.scorer(), input.context, r.canonical, true);
  const std::size_t max_len = params.max_len.value_or(input.text.size());

  std::size_t accepted = 0;
  std::size_t non_canonical = 0;
  std::set<Tokenization> distinct;
  for (std::size_t i = 0; i < params.k; ++i) {
    auto draw = rejection_sample(run.scorer(), vocab, input.context, input.text, max_len,
                                 SplitMix64::derive(params.seed, i));
    if (!draw.accepted) continue;
    ++accepted;
    if (draw.tokens != r.canonical) ++non_canonical;
    distinct.insert(std::move(draw.tokens));
  }
  const double k = static_cast<double>(params.k);
  r.acceptance_rate = static_cast<double>(accepted) / k;
  r.log_estimate = non_canonical == 0 ? kNegInf : std::log(static_cast<double>(non_canonical) / k);
  r.log_full = log_add_exp(r.log_estimate, r.log_canonical);
  r.distinct_sequences = distinct.size();
  return run.finish();
}

EstimateReport estimate(Method method, const Scorer& scorer, const Vocabulary& vocab,
                        const EstimateInput& input, const EstimatorParams& params) {
  switch (method) {
    case Method::kCanonical:
      return estimate_canonical(scorer, vocab, input, params);
    case Method::kExact:
      return estimate_exact(scorer, vocab, input, params);
    case Method::kLattice:
      return estimate_lattice(scorer, vocab, input, params);
    case Method::kImportance:
      return estimate_importance(scorer, vocab, input, params);
    case Method::kRejection:
      return estimate_rejection(scorer, vocab, input, params);
  }
  throw ValidationError("unknown method");
}

double choice_score(const EstimateReport& report) {
  return report.method == Method::kCanonical ? report.log_canonical : report.log_full;
}

Choice choose(const Scorer& scorer, const Vocabulary& vocab,
              std::span<const EstimateInput> candidates, Method method,
              const EstimatorParams& params) {
  if (candidates.empty()) throw ValidationError("choose needs at least one candidate");
  Choice choice;
  choice.reports.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    EstimatorParams p = params;
    p.seed = SplitMix64::derive(params.seed, i);
    choice.reports.push_back(estimate(method, scorer, vocab, candidates[i], p));
    if (choice_score(choice.reports[i]) > choice_score(choice.reports[choice.index])) {
      choice.index = i;
    }
  }
  return choice;
}

nlohmann::json report_to_json(const EstimateReport& report, bool include_timing) {
  auto log_value = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return nullptr;  // -inf: no probability mass found
  };
  nlohmann::json doc;
  doc["method"] = std::string(to_string(report.method));
  doc["estimate_target"] = report.estimate_target;
  doc["log_estimate"] = log_value(report.log_estimate);
  doc["log_canonical"] = log_value(report.log_canonical);
  doc["log_full"] = log_value(report.log_full);
  doc["k"] = report.k;
  doc["distinct_sequences"] = report.distinct_sequences;
  doc["max_len"] = report.max_len ? nlohmann::json(*report.max_len) : nlohmann::json(nullptr);
  doc["seed"] = report.seed;
  doc["include_eos"] = report.include_eos;
  if (include_timing) doc["wall_time_ms"] = report.wall_time_ms;
  doc["scorer_calls"] = report.scorer_calls;
  doc["generation_steps"] = report.generation_steps;
  doc["scored_sequences"] = report.scored_sequences;
  doc["lower_bound_certified"] = report.lower_bound_certified;
  doc["num_paths"] = to_decimal(report.num_paths);
  doc["canonical"] = report.canonical;
  if (report.acceptance_rate) doc["acceptance_rate"] = *report.acceptance_rate;
  doc["rng"] = report.rng;
  return doc;
}

}  // namespace tokmarg
