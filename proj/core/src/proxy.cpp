#include "tokmarg/proxy.hpp"

#include "tokmarg/error.hpp"
#include "tokmarg/logmath.hpp"
#include "tokmarg/rng.hpp"

namespace tokmarg {

ProxyDistribution::ProxyDistribution(const Scorer& scorer, const Lattice& lattice,
                                     std::optional<std::size_t> max_len)
    : scorer_(scorer), bounded_(lattice, max_len.value_or(lattice.size())) {
  if (bounded_.num_paths() == 0) {
    throw ValidationError("proxy distribution has empty support under the length bound");
  }
}

ProxyDistribution::Step ProxyDistribution::step(std::size_t pos, std::size_t budget,
                                                std::span<const double> logprobs) const {
  Step s;
  std::vector<double> allowed_lp;
  for (const auto& arc : bounded_.base().arcs(pos)) {
    if (budget == 0 || bounded_.paths_within(arc.end, budget - 1) == 0) continue;
    if (arc.token >= logprobs.size()) throw ScorerError("scorer vocabulary smaller than lattice");
    s.allowed.push_back(&arc);
    allowed_lp.push_back(logprobs[arc.token]);
  }
  s.log_z = log_sum_exp(allowed_lp);
  return s;
}

ProxyPath ProxyDistribution::logprob(std::span<const TokenId> context,
                                     std::span<const TokenId> tokens) const {
  std::vector<Tokenization> prefixes;
  prefixes.reserve(tokens.size());
  Tokenization prefix(context.begin(), context.end());
  for (TokenId t : tokens) {
    prefixes.push_back(prefix);
    prefix.push_back(t);
  }
  const auto dists = scorer_.next_logprobs_batch(prefixes);

  ProxyPath out;
  out.tokens.assign(tokens.begin(), tokens.end());
  std::size_t pos = 0;
  std::size_t budget = bounded_.max_len();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Step s = step(pos, budget, dists[i]);
    const Lattice::Arc* chosen = nullptr;
    for (const auto* arc : s.allowed) {
      if (arc->token == tokens[i]) chosen = arc;
    }
    if (chosen == nullptr) throw ValidationError("sequence is not a path of the proxy support");
    const double lp = dists[i][chosen->token];
    out.log_p += lp;
    out.log_q += lp - s.log_z;
    out.log_normalizers.push_back(s.log_z);
    pos = chosen->end;
    --budget;
  }
  if (pos != bounded_.base().size()) {
    throw ValidationError("sequence is not a path of the proxy support");
  }
  return out;
}

ProxyPath ProxyDistribution::sample(std::span<const TokenId> context, std::uint64_t seed) const {
  SplitMix64 rng(seed);
  ProxyPath out;
  Tokenization prefix(context.begin(), context.end());
  std::size_t pos = 0;
  std::size_t budget = bounded_.max_len();
  const std::size_t n = bounded_.base().size();
  while (pos < n) {
    const auto dist = scorer_.next_logprobs(prefix);
    const Step s = step(pos, budget, dist);
    if (s.allowed.empty()) throw std::logic_error("proxy sampling reached a dead end");
    const double u = rng.next_double();
    double cumulative = 0.0;
    const Lattice::Arc* chosen = s.allowed.back();
    for (const auto* arc : s.allowed) {
      cumulative += std::exp(dist[arc->token] - s.log_z);
      if (u < cumulative) {
        chosen = arc;
        break;
      }
    }
    const double lp = dist[chosen->token];
    out.tokens.push_back(chosen->token);
    out.log_p += lp;
    out.log_q += lp - s.log_z;
    out.log_normalizers.push_back(s.log_z);
    prefix.push_back(chosen->token);
    pos = chosen->end;
    --budget;
  }
  return out;
}

RejectionDraw rejection_sample(const Scorer& scorer, const Vocabulary& vocab,
                               std::span<const TokenId> context, std::string_view target,
                               std::size_t max_len, std::uint64_t seed) {
  SplitMix64 rng(seed);
  RejectionDraw draw;
  Tokenization prefix(context.begin(), context.end());
  std::size_t matched = 0;
  const TokenId eos = scorer.eos();
  while (draw.tokens.size() <= max_len) {
    const auto dist = scorer.next_logprobs(prefix);
    ++draw.steps;
    const double u = rng.next_double();
    double cumulative = 0.0;
    TokenId chosen = eos;
    for (TokenId t = 0; t <= eos; ++t) {
      cumulative += std::exp(dist[t]);
      if (u < cumulative) {
        chosen = t;
        break;
      }
    }
    if (chosen == eos) {
      draw.accepted = matched == target.size();
      return draw;
    }
    // Only max_len tokens may precede end-of-sequence.
    if (draw.tokens.size() == max_len) return draw;
    draw.tokens.push_back(chosen);
    prefix.push_back(chosen);
    if (chosen >= vocab.size()) return draw;
    const std::string& piece = vocab.token(chosen);
    if (target.substr(matched, piece.size()) != piece) return draw;
    matched += piece.size();
  }
  return draw;
}

}  // namespace tokmarg
