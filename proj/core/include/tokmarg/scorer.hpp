#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tokmarg/vocab.hpp"

namespace tokmarg {

// Autoregressive next-token distribution over vocab_size() tokens plus an
// end-of-sequence symbol (index vocab_size()). Implementations must be safe
// for concurrent calls.
class Scorer {
 public:
  virtual ~Scorer() = default;

  virtual std::size_t vocab_size() const = 0;
  TokenId eos() const { return static_cast<TokenId>(vocab_size()); }

  // vocab_size() + 1 log-probabilities; last entry is end-of-sequence.
  virtual std::vector<double> next_logprobs(std::span<const TokenId> context) const = 0;

  // Distributions for many contexts at once (teacher forcing, not generation).
  virtual std::vector<std::vector<double>> next_logprobs_batch(
      std::span<const Tokenization> contexts) const;

  // Total log-probability of each sequence after `context`, plus the
  // end-of-sequence factor when include_eos.
  virtual std::vector<double> score(std::span<const TokenId> context,
                                    std::span<const Tokenization> sequences,
                                    bool include_eos) const;
};

double score_sequence(const Scorer& scorer, std::span<const TokenId> context,
                      std::span<const TokenId> tokens, bool include_eos);

// Throws ScorerError unless the vector has vocab_size + 1 entries whose
// exponentials sum to 1 within `tolerance`.
void check_normalized(std::span<const double> logprobs, std::size_t vocab_size,
                      double tolerance);

class UniformScorer final : public Scorer {
 public:
  explicit UniformScorer(std::size_t vocab_size) : vocab_size_(vocab_size) {}
  std::size_t vocab_size() const override { return vocab_size_; }
  std::vector<double> next_logprobs(std::span<const TokenId> context) const override;
  std::vector<double> score(std::span<const TokenId> context,
                            std::span<const Tokenization> sequences,
                            bool include_eos) const override;

 private:
  std::size_t vocab_size_;
};

// Deterministic pseudo-language-model: logit(candidate | context) is a keyed
// hash of (seed, context, candidate) mapped to [0, 1) and divided by the
// temperature, then softmax-normalized. BLAKE2b derives a per-context key and
// SipHash-2-4 hashes each candidate under it.
class HashLM final : public Scorer {
 public:
  static constexpr double kDefaultTemperature = 0.25;

  HashLM(std::uint64_t seed, std::size_t vocab_size, double temperature = kDefaultTemperature);

  std::size_t vocab_size() const override { return vocab_size_; }
  std::uint64_t seed() const { return seed_; }
  double temperature() const { return temperature_; }
  std::vector<double> next_logprobs(std::span<const TokenId> context) const override;

 private:
  std::uint64_t seed_;
  std::size_t vocab_size_;
  double temperature_;
};

// Add-k smoothed bigram or trigram model. Contexts shorter than order - 1 are
// left-padded with a begin-of-sequence marker.
class NGramLM final : public Scorer {
 public:
  NGramLM(int order, std::size_t vocab_size, double add_k);

  // Each sentence contributes its n-grams, ending with end-of-sequence.
  static NGramLM train(int order, std::size_t vocab_size, double add_k,
                       std::span<const Tokenization> sentences);

  static NGramLM from_json(const nlohmann::json& doc);
  static NGramLM load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

  int order() const { return order_; }
  double add_k() const { return add_k_; }
  std::size_t vocab_size() const override { return vocab_size_; }
  std::vector<double> next_logprobs(std::span<const TokenId> context) const override;

  void add_count(const Tokenization& history, TokenId next, std::uint64_t count);

 private:
  struct Row {
    std::map<TokenId, std::uint64_t> next;
    std::uint64_t total = 0;
  };

  Tokenization history_of(std::span<const TokenId> context) const;
  TokenId bos() const { return static_cast<TokenId>(vocab_size_ + 1); }

  int order_;
  std::size_t vocab_size_;
  double add_k_;
  std::map<Tokenization, Row> rows_;
};

// Forwards to another scorer and counts calls. next_logprobs calls are
// sequential generation steps; batch and score calls are not.
class InstrumentedScorer final : public Scorer {
 public:
  explicit InstrumentedScorer(const Scorer& inner) : inner_(inner) {}

  std::size_t vocab_size() const override { return inner_.vocab_size(); }
  std::vector<double> next_logprobs(std::span<const TokenId> context) const override;
  std::vector<std::vector<double>> next_logprobs_batch(
      std::span<const Tokenization> contexts) const override;
  std::vector<double> score(std::span<const TokenId> context,
                            std::span<const Tokenization> sequences,
                            bool include_eos) const override;

  std::uint64_t generation_steps() const { return generation_steps_.load(); }
  std::uint64_t batch_calls() const { return batch_calls_.load(); }
  std::uint64_t batch_contexts() const { return batch_contexts_.load(); }
  std::uint64_t score_calls() const { return score_calls_.load(); }
  std::uint64_t scored_sequences() const { return scored_sequences_.load(); }
  std::uint64_t total_calls() const {
    return generation_steps() + batch_calls() + score_calls();
  }

 private:
  const Scorer& inner_;
  mutable std::atomic<std::uint64_t> generation_steps_{0};
  mutable std::atomic<std::uint64_t> batch_calls_{0};
  mutable std::atomic<std::uint64_t> batch_contexts_{0};
  mutable std::atomic<std::uint64_t> score_calls_{0};
  mutable std::atomic<std::uint64_t> scored_sequences_{0};
};

}  // namespace tokmarg
