#pragma once

#include <chrono>
#include <memory>
#include <string>

#include "tokmarg/scorer.hpp"

namespace tokmarg {

struct HttpScorerOptions {
  std::size_t vocab_size = 0;
  // Sequences per POST /v1/score.
  std::size_t batch_size = 32;
  std::size_t max_in_flight = 4;
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{50};
  std::chrono::seconds timeout{60};
  // Servers typically compute in float32.
  double normalization_tolerance = 1e-6;
};

// Scorer backed by the JSON-over-HTTP protocol:
//   POST /v1/next_logprobs {"context": [ids]} -> {"logprobs": [...]}
//   POST /v1/score {"context", "sequences", "include_eos"} -> {"logprobs": [...]}
// Transport failures and 5xx responses are retried with exponential backoff;
// 4xx responses and malformed or unnormalized payloads raise ScorerError.
class HttpScorer final : public Scorer {
 public:
  // endpoint: "http://host[:port][/base-path]"
  HttpScorer(std::string endpoint, HttpScorerOptions options);
  ~HttpScorer() override;
  HttpScorer(const HttpScorer&) = delete;
  HttpScorer& operator=(const HttpScorer&) = delete;

  std::size_t vocab_size() const override { return options_.vocab_size; }
  const HttpScorerOptions& options() const { return options_; }

  std::vector<double> next_logprobs(std::span<const TokenId> context) const override;
  std::vector<std::vector<double>> next_logprobs_batch(
      std::span<const Tokenization> contexts) const override;
  std::vector<double> score(std::span<const TokenId> context,
                            std::span<const Tokenization> sequences,
                            bool include_eos) const override;

 private:
  class Connection;
  class Pool;

  HttpScorerOptions options_;
  std::unique_ptr<Pool> pool_;
};

std::unique_ptr<Scorer> http_scorer(const std::string& endpoint, HttpScorerOptions options);

}  // namespace tokmarg
