#include "tokmarg/scorer.hpp"

#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "support/oracles.hpp"
#include "tokmarg/error.hpp"
#include "tokmarg/logmath.hpp"

namespace tokmarg {
namespace {

double mass(const std::vector<double>& lp) {
  double s = 0.0;
  for (double v : lp) s += std::exp(v);
  return s;
}

Tokenization random_context(std::mt19937_64& rng, std::size_t vocab) {
  Tokenization ctx(rng() % 12);
  for (auto& t : ctx) t = static_cast<TokenId>(rng() % vocab);
  return ctx;
}

TEST(ScorerTest, UniformScore) {
  const UniformScorer u(3);
  EXPECT_NEAR(score_sequence(u, {}, Tokenization{0, 1, 2}, false), 3 * std::log(0.25), 1e-12);
  EXPECT_EQ(score_sequence(u, {}, Tokenization{}, false), 0.0);
  EXPECT_NEAR(score_sequence(u, {}, Tokenization{}, true), std::log(0.25), 1e-12);
}

TEST(ScorerTest, HashLMTwoTokenScore) {
  const HashLM lm(7, 3);
  const Tokenization t{0, 1};
  const double expected = lm.next_logprobs(Tokenization{})[0] + lm.next_logprobs(Tokenization{0})[1];
  EXPECT_NEAR(score_sequence(lm, {}, t, false), expected, 1e-12);
}

TEST(ScorerTest, Normalization) {
  std::mt19937_64 rng(1);
  const HashLM hash(3, 50);
  const UniformScorer uniform(50);
  std::vector<Tokenization> sentences;
  for (int i = 0; i < 30; ++i) sentences.push_back(random_context(rng, 50));
  const auto bigram = NGramLM::train(2, 50, 0.5, sentences);
  const auto trigram = NGramLM::train(3, 50, 0.1, sentences);
  for (const Scorer* s : std::initializer_list<const Scorer*>{&hash, &uniform, &bigram, &trigram}) {
    for (int i = 0; i < 1000; ++i) {
      const auto lp = s->next_logprobs(random_context(rng, 50));
      ASSERT_EQ(lp.size(), 51u);
      EXPECT_NEAR(mass(lp), 1.0, 1e-9);
    }
  }
}

TEST(ScorerTest, HashLMDeterministicAndSeedSensitive) {
  const Tokenization ctx{4, 1, 9};
  EXPECT_EQ(HashLM(5, 20).next_logprobs(ctx), HashLM(5, 20).next_logprobs(ctx));
  EXPECT_NE(HashLM(5, 20).next_logprobs(ctx), HashLM(6, 20).next_logprobs(ctx));
  EXPECT_NE(HashLM(5, 20).next_logprobs(ctx), HashLM(5, 20).next_logprobs(Tokenization{4, 1}));
  EXPECT_THROW(HashLM(5, 20, 0.0), ValidationError);
}

TEST(ScorerTest, BatchScoreMatchesStepwise) {
  const HashLM lm(11, 6);
  std::mt19937_64 rng(2);
  std::vector<Tokenization> seqs;
  for (int i = 0; i < 20; ++i) seqs.push_back(random_context(rng, 6));
  const Tokenization ctx{1, 2};
  for (bool eos : {false, true}) {
    const auto scores = lm.score(ctx, seqs, eos);
    ASSERT_EQ(scores.size(), seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      EXPECT_NEAR(scores[i], testing::stepwise_logprob(lm, ctx, seqs[i], eos), 1e-12);
    }
  }
}

TEST(ScorerTest, InvalidIdsRejected) {
  const HashLM lm(1, 4);
  EXPECT_THROW(lm.score({}, std::vector<Tokenization>{{0, 9}}, false), ValidationError);
}

TEST(ScorerTest, CheckNormalized) {
  EXPECT_NO_THROW(check_normalized(std::vector<double>{std::log(0.5), std::log(0.5)}, 1, 1e-9));
  EXPECT_THROW(check_normalized(std::vector<double>{std::log(0.25), std::log(0.25)}, 1, 1e-6),
               ScorerError);
  EXPECT_THROW(check_normalized(std::vector<double>{0.0}, 1, 1e-9), ScorerError);
}

TEST(ScorerTest, NGramAddKSmoothing) {
  // bigram over V = 2 (+ eos): counts after BOS: token 0 twice.
  const auto lm = NGramLM::train(2, 2, 1.0, std::vector<Tokenization>{{0}, {0}});
  const auto first = lm.next_logprobs(Tokenization{});
  EXPECT_NEAR(std::exp(first[0]), 3.0 / 5.0, 1e-12);
  EXPECT_NEAR(std::exp(first[1]), 1.0 / 5.0, 1e-12);
  const auto after = lm.next_logprobs(Tokenization{0});
  EXPECT_NEAR(std::exp(after[2]), 3.0 / 5.0, 1e-12);  // eos after 0 twice
}

TEST(ScorerTest, NGramRoundTrip) {
  std::mt19937_64 rng(3);
  std::vector<Tokenization> sentences;
  for (int i = 0; i < 10; ++i) sentences.push_back(random_context(rng, 8));
  const auto lm = NGramLM::train(3, 8, 0.2, sentences);
  const auto path = std::filesystem::temp_directory_path() / "tokmarg_ngram_test.json";
  lm.save(path);
  const auto back = NGramLM::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.order(), 3);
  for (int i = 0; i < 50; ++i) {
    const auto ctx = random_context(rng, 8);
    EXPECT_EQ(back.next_logprobs(ctx), lm.next_logprobs(ctx));
  }
  EXPECT_THROW(NGramLM::from_json(nlohmann::json{{"format", "other"}}), ValidationError);
  EXPECT_THROW(NGramLM(4, 8, 0.1), ValidationError);
  EXPECT_THROW(NGramLM(2, 8, 0.0), ValidationError);
}

TEST(ScorerTest, InstrumentedCounts) {
  const HashLM lm(1, 5);
  const InstrumentedScorer counted(lm);
  counted.next_logprobs(Tokenization{});
  counted.next_logprobs_batch(std::vector<Tokenization>{{}, {1}, {2}});
  counted.score({}, std::vector<Tokenization>{{1, 2}, {3}}, false);
  EXPECT_EQ(counted.generation_steps(), 1u);
  EXPECT_EQ(counted.batch_calls(), 1u);
  EXPECT_EQ(counted.batch_contexts(), 3u);
  EXPECT_EQ(counted.score_calls(), 1u);
  EXPECT_EQ(counted.scored_sequences(), 2u);
  EXPECT_EQ(counted.total_calls(), 3u);
}

TEST(LogMathTest, LogSumExp) {
  const std::vector<double> v{std::log(0.25), std::log(0.0625)};
  EXPECT_NEAR(std::exp(log_sum_exp(v)), 0.3125, 1e-12);
  EXPECT_EQ(log_sum_exp(std::vector<double>{}), kNegInf);
  EXPECT_EQ(log_add_exp(kNegInf, kNegInf), kNegInf);
  EXPECT_NEAR(log_add_exp(-1000.0, -1000.0), -1000.0 + std::log(2.0), 1e-12);
}

}  // namespace
}  // namespace tokmarg
