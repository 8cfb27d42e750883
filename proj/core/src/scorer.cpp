#include "tokmarg/scorer.hpp"

#include <cmath>

#include "tokmarg/error.hpp"
#include "tokmarg/logmath.hpp"

namespace tokmarg {

std::vector<std::vector<double>> Scorer::next_logprobs_batch(
    std::span<const Tokenization> contexts) const {
  std::vector<std::vector<double>> out;
  out.reserve(contexts.size());
  for (const auto& ctx : contexts) out.push_back(next_logprobs(ctx));
  return out;
}

std::vector<double> Scorer::score(std::span<const TokenId> context,
                                  std::span<const Tokenization> sequences,
                                  bool include_eos) const {
  std::vector<double> out;
  out.reserve(sequences.size());
  Tokenization prefix;
  for (const auto& seq : sequences) {
    prefix.assign(context.begin(), context.end());
    double total = 0.0;
    for (TokenId t : seq) {
      if (t >= vocab_size()) throw ValidationError("token id out of scorer vocabulary");
      total += next_logprobs(prefix)[t];
      prefix.push_back(t);
    }
    if (include_eos) total += next_logprobs(prefix)[eos()];
    out.push_back(total);
  }
  return out;
}

double score_sequence(const Scorer& scorer, std::span<const TokenId> context,
                      std::span<const TokenId> tokens, bool include_eos) {
  const Tokenization seq(tokens.begin(), tokens.end());
  return scorer.score(context, std::span<const Tokenization>(&seq, 1), include_eos).front();
}

void check_normalized(std::span<const double> logprobs, std::size_t vocab_size,
                      double tolerance) {
  if (logprobs.size() != vocab_size + 1) {
    throw ScorerError("expected " + std::to_string(vocab_size + 1) +
                      " log-probabilities, got " + std::to_string(logprobs.size()));
  }
  double mass = 0.0;
  for (double lp : logprobs) {
    if (std::isnan(lp) || lp > 0.0) {
      throw ScorerError("log-probability outside (-inf, 0]");
    }
    mass += std::exp(lp);
  }
  if (std::abs(mass - 1.0) > tolerance) {
    throw ScorerError("next-token distribution not normalized: total mass " +
                      std::to_string(mass));
  }
}

std::vector<double> UniformScorer::next_logprobs(std::span<const TokenId>) const {
  return std::vector<double>(vocab_size_ + 1, -std::log(static_cast<double>(vocab_size_ + 1)));
}

std::vector<double> UniformScorer::score(std::span<const TokenId>,
                                         std::span<const Tokenization> sequences,
                                         bool include_eos) const {
  const double step = -std::log(static_cast<double>(vocab_size_ + 1));
  std::vector<double> out;
  out.reserve(sequences.size());
  for (const auto& seq : sequences) {
    for (TokenId t : seq) {
      if (t >= vocab_size_) throw ValidationError("token id out of scorer vocabulary");
    }
    out.push_back(step * static_cast<double>(seq.size() + (include_eos ? 1 : 0)));
  }
  return out;
}

std::vector<double> InstrumentedScorer::next_logprobs(std::span<const TokenId> context) const {
  ++generation_steps_;
  return inner_.next_logprobs(context);
}

std::vector<std::vector<double>> InstrumentedScorer::next_logprobs_batch(
    std::span<const Tokenization> contexts) const {
  ++batch_calls_;
  batch_contexts_ += contexts.size();
  return inner_.next_logprobs_batch(contexts);
}

std::vector<double> InstrumentedScorer::score(std::span<const TokenId> context,
                                              std::span<const Tokenization> sequences,
                                              bool include_eos) const {
  ++score_calls_;
  scored_sequences_ += sequences.size();
  return inner_.score(context, sequences, include_eos);
}

}  // namespace tokmarg
