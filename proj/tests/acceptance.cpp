// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "inputs.hpp"
#include "support/oracles.hpp"
#include "tokmarg/analysis.hpp"
#include "tokmarg/estimators.hpp"
#include "tokmarg/http_scorer.hpp"
#include "tokmarg/lattice.hpp"
#include "tokmarg/logmath.hpp"
#include "tokmarg/neighbors.hpp"
#include "tokmarg/proxy.hpp"
#include "tokmarg/rng.hpp"
#include "tokmarg/sampling.hpp"
#include "tokmarg/scorer_server.hpp"

namespace {

using namespace tokmarg;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// Random instance over a small alphabet with a bounded number of paths.
struct Instance {
  Vocabulary vocab;
  std::string text;
};

Instance random_instance(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len) {
  const std::string alphabet = rng() % 2 ? "ab" : "abc";
  auto vocab = testing::random_vocabulary(rng, alphabet, 4 + rng() % 8, 2 + rng() % 3);
  const std::size_t len = min_len + rng() % (max_len - min_len + 1);
  return {std::move(vocab), testing::random_text(rng, alphabet, len)};
}

Outcome exact_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const auto inst = random_instance(rng, 1, 14);
    const HashLM lm(rng(), inst.vocab.size());
    EstimatorParams p;
    p.exact_limit = 10'000'000;
    const auto got = estimate_exact(lm, inst.vocab, {{}, inst.text, {}}, p).log_full;
    const double want = testing::brute_force_marginal(lm, inst.vocab, {}, inst.text);
    worst = std::max(worst, std::abs(got - want));
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-9 && secs < 60.0,
          "200 pairs, max |log diff| = " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

Outcome path_count_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(202);
  std::size_t checked = 0;
  std::size_t mismatches = 0;
  for (int v = 0; v < 50; ++v) {
    const std::string alphabet = v % 2 ? "ab" : "abc";
    const auto vocab = testing::random_vocabulary(rng, alphabet, 4 + rng() % 8, 2 + rng() % 3);
    for (std::size_t len = 0; len <= 16; ++len) {
      for (int rep = 0; rep < 4; ++rep) {
        const auto text = testing::random_text(rng, alphabet, len);
        const BigInt want = testing::brute_force_segmentations(vocab, text).size();
        mismatches += count_paths(build_lattice(vocab, text)) == want ? 0 : 1;
        ++checked;
      }
    }
  }
  const auto aa = Vocabulary::create({"a", "aa"});
  const bool fib = count_paths(build_lattice(aa, std::string(300, 'a'))) == testing::fibonacci(301);
  const double secs = seconds_since(start);
  return {mismatches == 0 && fib && secs < 30.0,
          std::to_string(checked) + " texts over 50 vocabularies, " + std::to_string(mismatches) +
              " mismatches, Fib(301) " + (fib ? "exact" : "WRONG") + ", " + fmt(secs, 3) + " s"};
}

Outcome lower_bound() {
  std::mt19937_64 rng(303);
  std::size_t violations = 0;
  std::size_t equality_runs = 0;
  std::size_t equality_failures = 0;
  double worst_excess = kNegInf;
  for (int i = 0; i < 500; ++i) {
    const auto inst = random_instance(rng, 4, 13);
    const HashLM lm(rng(), inst.vocab.size());
    const EstimateInput input{{}, inst.text, {}};
    EstimatorParams p;
    p.seed = rng();
    p.include_eos = rng() % 2;
    if (rng() % 3 == 0) p.max_len = 1 + inst.text.size() / 2 + rng() % inst.text.size();
    const auto exact = estimate_exact(lm, inst.vocab, input, p);
    const BigInt support = BoundedLattice(build_lattice(inst.vocab, inst.text),
                                          p.max_len.value_or(inst.text.size()))
                               .num_paths();
    const auto support_k = static_cast<std::size_t>(support);
    // Half the runs take k at or above the support.
    p.k = rng() % 2 ? support_k + rng() % 3 : 1 + rng() % std::max<std::size_t>(1, support_k);
    const auto lat = estimate_lattice(lm, inst.vocab, input, p);
    const double excess = lat.log_full - exact.log_full;
    worst_excess = std::max(worst_excess, excess);
    violations += excess > 1e-9 ? 1 : 0;
    if (p.k >= support_k) {
      ++equality_runs;
      equality_failures += std::abs(excess) <= 1e-9 ? 0 : 1;
    }
  }
  return {violations == 0 && equality_failures == 0,
          "500 runs, " + std::to_string(violations) + " above exact (max excess " +
              fmt(worst_excess) + "), " + std::to_string(equality_failures) + "/" +
              std::to_string(equality_runs) + " k>=support runs unequal"};
}

Outcome monotone_in_k() {
  std::mt19937_64 rng(404);
  std::size_t decreases = 0;
  std::size_t large = 0;
  for (int i = 0; i < 100; ++i) {
    const auto inst = random_instance(rng, 10, 16);
    const HashLM lm(rng(), inst.vocab.size());
    const EstimateInput input{{}, inst.text, {}};
    const auto support = static_cast<std::size_t>(count_paths(build_lattice(inst.vocab, inst.text)));
    large += support > 100 ? 1 : 0;
    EstimatorParams p;
    p.seed = rng();
    double prev = kNegInf;
    for (std::size_t k : {std::size_t{10}, std::size_t{50}, std::size_t{100}, support}) {
      p.k = std::min(k, support);
      const double v = estimate_lattice(lm, inst.vocab, input, p).log_full;
      decreases += v < prev ? 1 : 0;
      prev = std::max(prev, v);
    }
  }
  return {decreases == 0, "100 instances (" + std::to_string(large) + " with support > 100), " +
                              std::to_string(decreases) + " decreases"};
}

Outcome sampler_statistics() {
  const auto aa = Vocabulary::create({"a", "aa"});
  std::string detail;
  bool pass = true;
  for (std::size_t len : {std::size_t{6}, std::size_t{10}}) {
    const BoundedLattice lattice(build_lattice(aa, std::string(len, 'a')), len);
    const auto n = static_cast<std::size_t>(lattice.num_paths());
    const auto all = enumerate_paths(lattice, n);
    std::map<Tokenization, std::size_t> index;
    for (std::size_t i = 0; i < all.size(); ++i) index[all[i]] = i;
    const double critical = testing::chi_square_critical(static_cast<double>(n - 1), 0.001);
    std::size_t passed = 0;
    std::size_t set_failures = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      SampleSpec spec;
      spec.k = 100 * n;
      spec.seed = seed;
      spec.with_replacement = true;
      std::vector<std::size_t> counts(n, 0);
      for (const auto& t : sample_uniform(lattice, spec)) ++counts.at(index.at(t));
      passed += testing::chi_square_uniform(counts) <= critical ? 1 : 0;

      spec.k = n;
      spec.with_replacement = false;
      const auto draws = sample_uniform(lattice, spec);
      const std::set<Tokenization> distinct(draws.begin(), draws.end());
      const std::set<Tokenization> expected(all.begin(), all.end());
      set_failures += distinct.size() == draws.size() && distinct == expected ? 0 : 1;
    }
    pass = pass && passed >= 99 && set_failures == 0;
    detail += "N=" + std::to_string(n) + ": " + std::to_string(passed) + "/100 seeds pass, " +
              std::to_string(set_failures) + " set failures; ";
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

Outcome off_by_one_oracle() {
  std::mt19937_64 rng(606);
  std::size_t checked = 0;
  std::size_t failures = 0;
  for (int v = 0; v < 20; ++v) {
    const auto vocab = testing::random_vocabulary(rng, "ab", 4 + rng() % 8, 2 + rng() % 3);
    // Every text over {a, b} of 1 to 10 bytes.
    for (std::size_t len = 1; len <= 10; ++len) {
      for (std::uint32_t bits = 0; bits < (1u << len); ++bits) {
        std::string text(len, 'a');
        for (std::size_t i = 0; i < len; ++i) text[i] = (bits >> i) & 1 ? 'b' : 'a';
        const auto canonical = canonical_tokenize(vocab, text);
        auto members = off_by_one(vocab, canonical).members;
        bool ok = true;
        const auto lattice = build_lattice(vocab, text);
        for (const auto& m : members) {
          ok = ok && m.size() == canonical.size() + 1 && contains(lattice, m);
        }
        std::sort(members.begin(), members.end());
        ok = ok && members == testing::brute_force_off_by_one(vocab, canonical);
        failures += ok ? 0 : 1;
        ++checked;
      }
    }
  }
  return {failures == 0, std::to_string(checked) + " texts over 20 vocabularies, " +
                             std::to_string(failures) + " failures"};
}

Outcome weight_identity() {
  std::mt19937_64 rng(707);
  double worst = 0.0;
  std::size_t samples = 0;
  for (int i = 0; i < 50; ++i) {
    const auto inst = random_instance(rng, 6, 24);
    const HashLM lm(rng(), inst.vocab.size());
    const ProxyDistribution q(lm, build_lattice(inst.vocab, inst.text));
    const Tokenization ctx{static_cast<TokenId>(rng() % inst.vocab.size())};
    for (int j = 0; j < 20; ++j, ++samples) {
      const auto s = q.sample(ctx, rng());
      const double log_w = s.log_p - s.log_q;
      double log_z = 0.0;
      for (double z : s.log_normalizers) log_z += z;
      // p/q and prod z compared as ratios.
      worst = std::max(worst, std::abs(std::expm1(log_w - log_z)));
    }
  }
  return {worst <= 1e-9, std::to_string(samples) + " samples, max relative error " + fmt(worst)};
}

Outcome importance_unbiased() {
  std::mt19937_64 rng(808);
  double worst = 0.0;
  std::string detail;
  for (int inst_i = 0; inst_i < 5; ++inst_i) {
    const auto inst = random_instance(rng, 12, 12);
    const HashLM lm(rng(), inst.vocab.size());
    const EstimateInput input{{}, inst.text, {}};
    EstimatorParams p;
    p.k = 64;
    p.exclude_canonical = false;
    const double exact = estimate_exact(lm, inst.vocab, input, p).log_full;
    std::vector<double> logs;
    for (std::uint64_t run = 0; run < 200; ++run) {
      p.seed = SplitMix64::derive(inst_i, run);
      logs.push_back(estimate_importance(lm, inst.vocab, input, p).log_full);
    }
    const double mean = log_sum_exp(logs) - std::log(200.0);
    const double rel = std::abs(std::expm1(mean - exact));
    worst = std::max(worst, rel);
  }
  detail = "5 instances, n=12, k=64, 200 runs: max grand-mean relative error " + fmt(worst);

  // End-to-end underestimation study on the synthetic corpus.
  const auto vocab = load_vocabulary(std::string(TOKMARG_DATA_DIR) + "/toy_vocab.json");
  const auto corpus = cli::load_corpus(std::string(TOKMARG_DATA_DIR) + "/corpus.jsonl", vocab);
  const HashLM lm(1, vocab.size());
  EstimatorParams p;
  p.k = 100;
  p.seed = 1;
  const auto study = underestimation_study(lm, vocab, corpus, p, 1);
  const bool well_formed = study.records.size() == corpus.size() && study.percentage >= 0.0 &&
                           study.percentage <= 100.0 &&
                           study.percentage == 100.0 * study.underestimated / corpus.size();
  detail += "; underestimation study: " + std::to_string(study.underestimated) + "/" +
            std::to_string(corpus.size()) + " = " + fmt(study.percentage) + "%";
  return {worst < 0.05 && well_formed, detail};
}

Outcome decoding_free() {
  std::string detail;
  bool pass = true;
  // Instrumentation: lattice estimates make no sequential steps.
  {
    std::mt19937_64 rng(909);
    std::size_t bad = 0;
    for (int i = 0; i < 20; ++i) {
      const auto inst = random_instance(rng, 8, 20);
      const HashLM lm(rng(), inst.vocab.size());
      const EstimateInput input{{}, inst.text, {}};
      EstimatorParams p;
      p.k = 50;
      p.seed = rng();
      const InstrumentedScorer lat_count(lm);
      estimate_lattice(lat_count, inst.vocab, input, p);
      const InstrumentedScorer is_count(lm);
      estimate_importance(is_count, inst.vocab, input, p);
      const ProxyDistribution q(lm, build_lattice(inst.vocab, inst.text));
      std::uint64_t steps = 0;
      for (std::size_t j = 0; j < p.k; ++j) steps += q.sample({}, SplitMix64::derive(p.seed, j)).tokens.size();
      bad += lat_count.generation_steps() == 0 && is_count.generation_steps() == steps ? 0 : 1;
    }
    pass = bad == 0;
    detail = "step counts wrong on " + std::to_string(bad) + "/20 inputs";
  }
  // Timing against the mock HTTP scorer.
  const auto vocab = load_vocabulary(std::string(TOKMARG_DATA_DIR) + "/toy_vocab.json");
  const auto corpus = cli::load_corpus(std::string(TOKMARG_DATA_DIR) + "/corpus.jsonl", vocab);
  const HashLM model(3, vocab.size());
  ScorerServerOptions server_options;
  server_options.forward_latency = std::chrono::microseconds(TOKMARG_FORWARD_LATENCY_US);
  ScorerServer server(model, server_options);
  server.start();
  HttpScorerOptions client_options;
  client_options.vocab_size = vocab.size();
  const HttpScorer remote(server.endpoint(), client_options);
  std::map<std::size_t, double> speedup;
  for (std::size_t n : {std::size_t{30}, std::size_t{120}}) {
    const EstimateInput input{{}, cli::corpus_text_of_length(corpus, n), {}};
    const auto r = timing_study(remote, vocab, input, 100, std::nullopt, 7);
    speedup[n] = r.speedup;
    detail += "; n=" + std::to_string(n) + " k=100: score " + fmt(r.score_ms) + " ms, gen " +
              fmt(r.gen_ms) + " ms, speedup " + fmt(r.speedup);
  }
  pass = pass && speedup[30] > 1.0 && speedup[120] > speedup[30];
  return {pass, detail};
}

Outcome spearman_oracle() {
  std::mt19937_64 rng(1010);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + rng() % 200;
    std::uniform_int_distribution<int> d(0, 1 + static_cast<int>(rng() % 30));
    std::vector<double> xs(n);
    std::vector<double> ys(n);
    for (auto& x : xs) x = d(rng);
    for (auto& y : ys) y = d(rng);
    xs[0] = 0.0;  // both vectors non-constant
    xs[1] = 1.0;
    ys[0] = 1.0;
    ys[1] = 0.0;
    worst = std::max(worst, std::abs(spearman_rho(xs, ys) - testing::naive_spearman(xs, ys)));
  }
  return {worst <= 1e-12, "100 tied vectors, max |diff| = " + fmt(worst)};
}

std::string run_binary(const std::string& args) {
  const std::string cmd = std::string(TOKMARG_CLI_PATH) + " " + args + " 2>&1";
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  if (!pipe) return {};
  std::string out;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe.get())) > 0) out.append(buf.data(), n);
  return out;
}

Outcome determinism() {
  const std::string data = TOKMARG_DATA_DIR;
  const std::string toy = " --vocab " + data + "/toy_vocab.json";
  const std::string text = "'the cat sat on the mat.'";
  const std::string scorer = " --scorer builtin:hash:5";
  const std::vector<std::string> commands{
      "sample " + text + toy + " --k 200 --seed 3",
      "sample " + text + toy + " --k 200 --seed 3 --exclude-canonical --exclude-off-by-one",
      "sample " + text + toy + " --k 200 --seed 3 --with-replacement --max-len 12",
      "estimate " + text + toy + scorer + " --method lattice --k 100 --seed 3",
      "estimate " + text + toy + scorer + " --method importance --k 100 --seed 3",
      "estimate " + text + toy + scorer + " --method importance --plain-importance --k 100 --seed 3",
      "estimate " + text + toy + scorer + " --method rejection --k 100 --seed 3",
      "estimate " + text + toy + scorer + " --serve-mock --method lattice --k 100 --seed 3",
      "choose --tasks " + data + "/tasks.jsonl" + toy + scorer + " --k 20 --seed 3 --jobs 3",
      "study underestimation --corpus " + data + "/corpus.jsonl" + toy + scorer +
          " --k 20 --seed 3 --jobs 2",
      "study spearman --corpus " + data + "/corpus.jsonl" + toy + scorer +
          " --num-sequences 50 --seed 3",
  };
  std::size_t differing = 0;
  std::size_t empty = 0;
  for (const auto& c : commands) {
    const auto a = run_binary(c);
    const auto b = run_binary(c);
    differing += a == b ? 0 : 1;
    empty += a.empty() ? 1 : 0;
  }
  return {differing == 0 && empty == 0,
          std::to_string(commands.size()) + " commands run twice, " + std::to_string(differing) +
              " differ"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"exact-oracle-equivalence", exact_oracle},
      {"path-count-oracle", path_count_oracle},
      {"lower-bound-certification", lower_bound},
      {"monotonicity-in-k", monotone_in_k},
      {"uniform-sampler-statistics", sampler_statistics},
      {"off-by-one-correctness", off_by_one_oracle},
      {"importance-weight-identity", weight_identity},
      {"importance-unbiasedness", importance_unbiased},
      {"decoding-free", decoding_free},
      {"spearman-implementation", spearman_oracle},
      {"determinism", determinism},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    const auto start = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " ["
              << fmt(seconds_since(start), 3) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
