#include "cli.hpp"

#include <atomic>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "inputs.hpp"
#include "tokmarg/analysis.hpp"
#include "tokmarg/error.hpp"
#include "tokmarg/estimators.hpp"
#include "tokmarg/lattice.hpp"
#include "tokmarg/neighbors.hpp"
#include "tokmarg/rng.hpp"
#include "tokmarg/sampling.hpp"
#include "tokmarg/scorer_server.hpp"

namespace tokmarg::cli {
namespace {

using nlohmann::json;

struct Common {
  std::string vocab_path;
  bool pretty = false;
};

struct ScorerArgs {
  std::string spec;
  bool serve_mock = false;
  std::int64_t forward_latency_us = 0;
};

struct EstimatorArgs {
  std::string method = "lattice";
  std::size_t k = 1000;
  std::optional<std::size_t> max_len;
  std::optional<std::uint64_t> seed;
  bool include_eos = false;
  bool plain_importance = false;
  bool proxy_length_bound = false;
  bool strict_k = false;
  std::size_t exact_limit = 1'000'000;
  bool timing = false;
};

struct Args {
  Common common;
  ScorerArgs scorer;
  EstimatorArgs est;
  std::string text;
  std::string canonical_ids;
  std::string context_text;
  std::string context_ids;
  // lattice
  bool dump = false;
  bool count = false;
  std::optional<std::size_t> enumerate;
  // sample
  bool exclude_canonical = false;
  bool exclude_off_by_one = false;
  bool with_replacement = false;
  // choose / study
  std::string tasks_path;
  std::string corpus_path;
  std::string output_path;
  std::string csv_path;
  std::size_t jobs = 1;
  std::size_t num_sequences = 1000;
  std::vector<std::size_t> lengths;
  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_batch = 256;
  // ngram-train
  int order = 2;
  double add_k = 0.1;
};

std::string dump(const json& doc, bool pretty) { return pretty ? doc.dump(2) : doc.dump(); }

json path_json(const Vocabulary& vocab, const Tokenization& ids) {
  json pieces = json::array();
  for (TokenId id : ids) pieces.push_back(bytes_to_latin1(vocab.token(id)));
  return json{{"ids", ids}, {"pieces", pieces}};
}

bool is_sampling(Method method) {
  return method == Method::kLattice || method == Method::kImportance ||
         method == Method::kRejection;
}

std::uint64_t require_seed(const std::optional<std::uint64_t>& seed, std::string_view what) {
  if (!seed) throw ValidationError(std::string(what) + " requires --seed");
  return *seed;
}

EstimatorParams estimator_params(const EstimatorArgs& a, Method method) {
  EstimatorParams p;
  p.k = a.k;
  p.max_len = a.max_len;
  p.seed = is_sampling(method) ? require_seed(a.seed, std::string(to_string(method)) + " method")
                               : a.seed.value_or(0);
  p.include_eos = a.include_eos;
  p.exclude_canonical = !a.plain_importance;
  p.proxy_length_bound = a.proxy_length_bound;
  p.strict_k = a.strict_k;
  p.exact_limit = a.exact_limit;
  return p;
}

ScorerHandle scorer_from(const ScorerArgs& a, const Vocabulary& vocab) {
  return make_scorer(a.spec, vocab, a.serve_mock, std::chrono::microseconds(a.forward_latency_us));
}

// Streams JSON-lines to --output (or stdout) and rows to --csv.
class StudyWriter {
 public:
  StudyWriter(const Args& args, std::ostream& out, std::string csv_header) : out_(out) {
    if (!args.output_path.empty()) {
      file_.open(args.output_path);
      if (!file_) throw ValidationError("cannot write " + args.output_path);
    }
    if (!args.csv_path.empty()) {
      csv_.open(args.csv_path);
      if (!csv_) throw ValidationError("cannot write " + args.csv_path);
      csv_ << csv_header << '\n';
    }
  }
  void record(const json& doc) { (file_.is_open() ? file_ : out_) << doc.dump() << '\n'; }
  void row(const std::string& line) {
    if (csv_.is_open()) csv_ << line << '\n';
  }
  void summary(const json& doc) {
    if (file_.is_open()) file_ << doc.dump() << '\n';
    out_ << doc.dump() << '\n';
  }

 private:
  std::ostream& out_;
  std::ofstream file_;
  std::ofstream csv_;
};

std::string csv_number(double v) {
  if (!std::isfinite(v)) return v < 0 ? "-inf" : "nan";
  return json(v).dump();
}

int cmd_tokenize(const Args& a, std::ostream& out) {
  const auto vocab = load_vocabulary(a.common.vocab_path);
  out << dump(path_json(vocab, canonical_tokenize(vocab, a.text)), a.common.pretty) << '\n';
  return kOk;
}

int cmd_lattice(const Args& a, std::ostream& out) {
  const auto vocab = load_vocabulary(a.common.vocab_path);
  Lattice lattice = build_lattice(vocab, a.text);
  json doc;
  if (a.dump) {
    doc = lattice_to_json(lattice);
  } else if (a.enumerate) {
    const std::size_t n = lattice.size();
    const BoundedLattice bounded(std::move(lattice), a.est.max_len.value_or(n));
    json paths = json::array();
    for (const auto& p : enumerate_paths(bounded, *a.enumerate)) paths.push_back(path_json(vocab, p));
    doc = json{{"num_paths", to_decimal(bounded.num_paths())}, {"paths", paths}};
  } else if (a.est.max_len) {
    const BoundedLattice bounded(std::move(lattice), *a.est.max_len);
    doc = json{{"num_paths", to_decimal(bounded.num_paths())}, {"max_len", *a.est.max_len}};
  } else {
    doc = json{{"num_paths", to_decimal(count_paths(lattice))}};
  }
  out << dump(doc, a.common.pretty) << '\n';
  return kOk;
}

int cmd_sample(const Args& a, std::ostream& out) {
  const auto vocab = load_vocabulary(a.common.vocab_path);
  SampleSpec spec;
  spec.k = a.est.k;
  spec.seed = require_seed(a.est.seed, "sample");
  spec.with_replacement = a.with_replacement;

  Lattice lattice = build_lattice(vocab, a.text);
  const std::size_t n = lattice.size();
  const BoundedLattice bounded(std::move(lattice), a.est.max_len.value_or(n));
  if (a.exclude_canonical || a.exclude_off_by_one) {
    EstimateInput input{{}, a.text, std::nullopt};
    if (!a.canonical_ids.empty()) input.canonical = parse_id_list(a.canonical_ids, vocab);
    const Tokenization canonical = resolve_canonical(vocab, input);
    if (a.exclude_canonical) spec.exclude.push_back(canonical);
    if (a.exclude_off_by_one) {
      for (auto& m : off_by_one(vocab, canonical).members) spec.exclude.push_back(std::move(m));
    }
  }
  const BigInt support = bounded.num_paths() - BigInt(exclusion_indices(bounded, spec.exclude).size());
  json samples = json::array();
  for (const auto& p : sample_uniform(bounded, spec)) samples.push_back(path_json(vocab, p));

  json doc{{"num_paths", to_decimal(bounded.num_paths())},
           {"support", to_decimal(support)},
           {"max_len", bounded.max_len()},
           {"k", spec.k},
           {"seed", spec.seed},
           {"with_replacement", spec.with_replacement},
           {"rng", SplitMix64::kAlgorithm},
           {"samples", samples}};
  out << dump(doc, a.common.pretty) << '\n';
  return kOk;
}

int cmd_estimate(const Args& a, std::ostream& out) {
  const auto vocab = load_vocabulary(a.common.vocab_path);
  const Method method = parse_method(a.est.method);
  const EstimatorParams params = estimator_params(a.est, method);
  if (!a.context_text.empty() && !a.context_ids.empty()) {
    throw ValidationError("--context and --context-ids are mutually exclusive");
  }
  EstimateInput input;
  input.text = a.text;
  if (!a.context_text.empty()) input.context = canonical_tokenize(vocab, a.context_text);
  if (!a.context_ids.empty()) input.context = parse_id_list(a.context_ids, vocab);
  if (!a.canonical_ids.empty()) input.canonical = parse_id_list(a.canonical_ids, vocab);

  const auto scorer = scorer_from(a.scorer, vocab);
  const auto report = estimate(method, scorer.get(), vocab, input, params);
  out << dump(report_to_json(report, a.est.timing), a.common.pretty) << '\n';
  return kOk;
}

int cmd_choose(const Args& a, std::ostream& out) {
  const auto vocab = load_vocabulary(a.common.vocab_path);
  const Method method = parse_method(a.est.method);
  const EstimatorParams params = estimator_params(a.est, method);
  const auto items = load_tasks(a.tasks_path, vocab);
  const auto scorer = scorer_from(a.scorer, vocab);

  std::vector<Choice> choices(items.size());
  std::vector<std::exception_ptr> errors(items.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      try {
        EstimatorParams p = params;
        p.seed = SplitMix64::derive(params.seed, i);
        choices[i] = choose(scorer.get(), vocab, items[i].candidates, method, p);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::min(a.jobs, items.size()); ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::size_t labeled = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (errors[i]) {
      try {
        std::rethrow_exception(errors[i]);
      } catch (const ValidationError& e) {
        throw ValidationError(a.tasks_path + ":" + std::to_string(items[i].line) + ": " + e.what());
      }
    }
    json doc{{"line", items[i].line}, {"chosen", choices[i].index}};
    json reports = json::array();
    for (const auto& r : choices[i].reports) reports.push_back(report_to_json(r, a.est.timing));
    doc["reports"] = reports;
    if (items[i].label) {
      ++labeled;
      const bool ok = *items[i].label == choices[i].index;
      correct += ok ? 1 : 0;
      doc["label"] = *items[i].label;
      doc["correct"] = ok;
    }
    out << dump(doc, a.common.pretty) << '\n';
  }
  json summary{{"summary", true}, {"method", std::string(to_string(method))},
               {"items", items.size()}, {"labeled", labeled}};
  summary["accuracy"] = labeled ? json(static_cast<double>(correct) / static_cast<double>(labeled))
                                : json(nullptr);
  out << dump(summary, a.common.pretty) << '\n';
  return kOk;
}

int cmd_study_underestimation(const Args& a, std::ostream& out) {
  const auto vocab = load_vocabulary(a.common.vocab_path);
  const auto corpus = load_corpus(a.corpus_path, vocab);
  EstimatorParams params = estimator_params(a.est, Method::kLattice);
  const auto scorer = scorer_from(a.scorer, vocab);
  const auto summary = underestimation_study(scorer.get(), vocab, corpus, params, a.jobs);

  StudyWriter writer(a, out, "id,n,k,lattice_log_full,importance_log_full,underestimated");
  for (std::size_t i = 0; i < summary.records.size(); ++i) {
    const auto& rec = summary.records[i];
    writer.record(record_to_json(rec, a.est.timing));
    writer.row(rec.id + "," + std::to_string(corpus[i].input.text.size()) + "," +
               std::to_string(params.k) + "," + csv_number(rec.reports[0].log_full) + "," +
               csv_number(rec.reports[1].log_full) + "," + (rec.underestimated ? "1" : "0"));
  }
  writer.summary(json{{"summary", true},
                      {"study", "underestimation"},
                      {"inputs", summary.records.size()},
                      {"k", params.k},
                      {"underestimated", summary.underestimated},
                      {"percentage", summary.percentage}});
  return kOk;
}

int cmd_study_spearman(const Args& a, std::ostream& out) {
  const auto vocab = load_vocabulary(a.common.vocab_path);
  const auto corpus = load_corpus(a.corpus_path, vocab);
  const std::uint64_t seed = require_seed(a.est.seed, "spearman study");
  const auto scorer = scorer_from(a.scorer, vocab);

  StudyWriter writer(a, out, "id,n,num_sequences,rho");
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    ComparisonRecord rec;
    rec.id = corpus[i].id;
    json extra{{"num_sequences", 0}, {"exhaustive", false}};
    try {
      const auto ranking = pq_ranking_study(scorer.get(), vocab, corpus[i].input, a.num_sequences,
                                            SplitMix64::derive(seed, i));
      rec.spearman_rho = ranking.rho;
      extra = json{{"num_sequences", ranking.num_sequences}, {"exhaustive", ranking.exhaustive}};
      sum += ranking.rho;
      ++defined;
    } catch (const ValidationError& e) {
      extra["error"] = e.what();  // fewer than two tokenizations, or all tied
    }
    json doc = record_to_json(rec, false);
    doc.update(extra);
    writer.record(doc);
    writer.row(rec.id + "," + std::to_string(corpus[i].input.text.size()) + "," +
               extra["num_sequences"].dump() + "," +
               (rec.spearman_rho ? csv_number(*rec.spearman_rho) : std::string()));
  }
  writer.summary(json{{"summary", true},
                      {"study", "spearman"},
                      {"inputs", corpus.size()},
                      {"defined", defined},
                      {"mean_rho", defined ? json(sum / static_cast<double>(defined)) : json(nullptr)}});
  return kOk;
}

int cmd_study_timing(const Args& a, std::ostream& out) {
  const auto vocab = load_vocabulary(a.common.vocab_path);
  const auto corpus = load_corpus(a.corpus_path, vocab);
  const std::uint64_t seed = require_seed(a.est.seed, "timing study");
  const auto scorer = scorer_from(a.scorer, vocab);

  std::vector<EstimateInput> inputs;
  if (a.lengths.empty()) {
    for (const auto& c : corpus) inputs.push_back(c.input);
  } else {
    for (std::size_t n : a.lengths) inputs.push_back({{}, corpus_text_of_length(corpus, n), {}});
  }
  StudyWriter writer(a, out, "n,k,score_ms,gen_ms,speedup");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto r = timing_study(scorer.get(), vocab, inputs[i], a.est.k, a.est.max_len,
                                SplitMix64::derive(seed, i));
    writer.record(timing_to_json(r));
    writer.row(std::to_string(r.n) + "," + std::to_string(r.k) + "," + csv_number(r.score_ms) +
               "," + csv_number(r.gen_ms) + "," + csv_number(r.speedup));
  }
  writer.summary(json{{"summary", true}, {"study", "timing"}, {"rows", inputs.size()}});
  return kOk;
}

int cmd_serve(const Args& a, std::ostream& out) {
  const auto vocab = load_vocabulary(a.common.vocab_path);
  std::string spec = a.scorer.spec;
  if (spec.empty() && std::getenv(kScorerEnv)) spec = std::getenv(kScorerEnv);
  const auto scorer = make_local_scorer(spec, vocab);
  ScorerServerOptions options;
  options.host = a.host;
  options.port = a.port;
  options.max_batch = a.max_batch;
  options.forward_latency = std::chrono::microseconds(a.scorer.forward_latency_us);
  ScorerServer server(*scorer, options);
  server.bind();
  out << json{{"endpoint", server.endpoint()}, {"vocab_size", vocab.size()}}.dump() << std::endl;
  server.run();
  return kOk;
}

int cmd_ngram_train(const Args& a, std::ostream& out) {
  const auto vocab = load_vocabulary(a.common.vocab_path);
  const auto corpus = load_corpus(a.corpus_path, vocab);
  std::vector<Tokenization> sentences;
  for (const auto& c : corpus) sentences.push_back(resolve_canonical(vocab, c.input));
  const auto model = NGramLM::train(a.order, vocab.size(), a.add_k, sentences);
  if (a.output_path.empty()) throw ValidationError("ngram-train requires --output");
  model.save(a.output_path);
  out << json{{"output", a.output_path},
              {"order", a.order},
              {"add_k", a.add_k},
              {"sentences", sentences.size()}}
             .dump()
      << '\n';
  return kOk;
}

void add_common(CLI::App* cmd, Args& a) {
  cmd->add_option("--vocab", a.common.vocab_path, "Vocabulary JSON file")->required();
  cmd->add_flag("--pretty", a.common.pretty, "Indent JSON output");
}

void add_scorer(CLI::App* cmd, Args& a) {
  cmd->add_option("--scorer", a.scorer.spec,
                  "builtin:hash:SEED | builtin:ngram:PATH | builtin:uniform | http:URL "
                  "(default: $TOKMARG_SCORER)");
  cmd->add_flag("--serve-mock", a.scorer.serve_mock,
                "Serve the builtin scorer in-process and call it over HTTP");
  cmd->add_option("--forward-latency-us", a.scorer.forward_latency_us,
                  "Simulated latency per mock-server request")
      ->check(CLI::NonNegativeNumber);
}

void add_estimator(CLI::App* cmd, Args& a, bool with_method) {
  if (with_method) {
    cmd->add_option("--method", a.est.method, "canonical | exact | lattice | importance | rejection");
  }
  cmd->add_option("--k", a.est.k, "Samples per estimate")->check(CLI::NonNegativeNumber);
  cmd->add_option("--max-len", a.est.max_len, "Token length bound");
  cmd->add_option("--seed", a.est.seed, "RNG seed (required for sampling)");
  cmd->add_flag("--include-eos", a.est.include_eos, "Multiply in P(eos | sequence)");
  cmd->add_flag("--plain-importance", a.est.plain_importance,
                "Importance sampling over the full marginal");
  cmd->add_flag("--proxy-length-bound", a.est.proxy_length_bound,
                "Apply --max-len to the proxy mask");
  cmd->add_flag("--strict-k", a.est.strict_k, "Cap the off-by-one seeds at k");
  cmd->add_option("--exact-limit", a.est.exact_limit, "Path limit for exact enumeration");
  cmd->add_flag("--timing", a.est.timing, "Include wall-clock fields in reports");
}

int dispatch(CLI::App& app, const Args& a, std::ostream& out) {
  using Handler = int (*)(const Args&, std::ostream&);
  const std::pair<const char*, Handler> commands[] = {
      {"tokenize", cmd_tokenize}, {"lattice", cmd_lattice},     {"sample", cmd_sample},
      {"estimate", cmd_estimate}, {"choose", cmd_choose},       {"serve", cmd_serve},
      {"ngram-train", cmd_ngram_train},
  };
  for (const auto& [name, handler] : commands) {
    if (app.got_subcommand(name)) return handler(a, out);
  }
  auto* study = app.get_subcommand("study");
  if (study->got_subcommand("underestimation")) return cmd_study_underestimation(a, out);
  if (study->got_subcommand("spearman")) return cmd_study_spearman(a, out);
  if (study->got_subcommand("timing")) return cmd_study_timing(a, out);
  throw ValidationError("no command given");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Args a;
  CLI::App app{"Tokenization marginals of language models over subword lattices", "tokmarg"};
  app.require_subcommand(1);

  auto* tokenize = app.add_subcommand("tokenize", "Canonical tokenization of a text");
  tokenize->add_option("text", a.text)->required();
  add_common(tokenize, a);

  auto* lattice = app.add_subcommand("lattice", "Build a tokenization lattice");
  lattice->add_option("text", a.text)->required();
  add_common(lattice, a);
  auto* group = lattice->add_option_group("output");
  group->add_flag("--dump", a.dump, "Print every arc");
  group->add_flag("--count", a.count, "Print the path count (default)");
  group->add_option("--enumerate", a.enumerate, "Print all paths; fails above LIMIT");
  group->require_option(0, 1);
  lattice->add_option("--max-len", a.est.max_len, "Token length bound");

  auto* sample = app.add_subcommand("sample", "Draw uniform tokenizations from the lattice");
  sample->add_option("text", a.text)->required();
  add_common(sample, a);
  sample->add_option("--k", a.est.k, "Number of samples")->required();
  sample->add_option("--max-len", a.est.max_len, "Token length bound");
  sample->add_option("--seed", a.est.seed, "RNG seed")->required();
  sample->add_flag("--exclude-canonical", a.exclude_canonical);
  sample->add_flag("--exclude-off-by-one", a.exclude_off_by_one);
  sample->add_flag("--with-replacement", a.with_replacement);
  sample->add_option("--canonical", a.canonical_ids, "Canonical token ids (external policy)");

  auto* est = app.add_subcommand("estimate", "Estimate the marginal probability of a text");
  est->add_option("text", a.text)->required();
  add_common(est, a);
  add_scorer(est, a);
  add_estimator(est, a, true);
  est->add_option("--context", a.context_text, "Context text, tokenized canonically");
  est->add_option("--context-ids", a.context_ids, "Context token ids");
  est->add_option("--canonical", a.canonical_ids, "Canonical token ids (external policy)");

  auto* choose_cmd = app.add_subcommand("choose", "Pick the most probable candidate per task");
  add_common(choose_cmd, a);
  add_scorer(choose_cmd, a);
  add_estimator(choose_cmd, a, true);
  choose_cmd->add_option("--tasks", a.tasks_path, "Task JSON-lines file")->required();
  choose_cmd->add_option("--jobs", a.jobs, "Items processed concurrently")->check(CLI::PositiveNumber);

  auto* study = app.add_subcommand("study", "Run an analysis study over a corpus");
  study->require_subcommand(1);
  auto add_study = [&](const char* name, const char* help) {
    auto* cmd = study->add_subcommand(name, help);
    add_common(cmd, a);
    add_scorer(cmd, a);
    add_estimator(cmd, a, false);
    cmd->add_option("--corpus", a.corpus_path, "Corpus JSON-lines file")->required();
    cmd->add_option("--output", a.output_path, "JSON-lines output (default: stdout)");
    cmd->add_option("--csv", a.csv_path, "CSV summary output");
    return cmd;
  };
  add_study("underestimation", "Lattice vs importance sampling at equal k")
      ->add_option("--jobs", a.jobs, "Inputs processed concurrently")
      ->check(CLI::PositiveNumber);
  add_study("spearman", "Rank correlation of log p and log q")
      ->add_option("--num-sequences", a.num_sequences, "Unique tokenizations per input");
  add_study("timing", "Batched scoring vs sequential generation")
      ->add_option("--lengths", a.lengths, "Text lengths cut from the corpus")
      ->delimiter(',');

  auto* serve = app.add_subcommand("serve", "Serve a builtin scorer over HTTP");
  add_common(serve, a);
  serve->add_option("--scorer", a.scorer.spec, "Builtin scorer spec");
  serve->add_option("--host", a.host);
  serve->add_option("--port", a.port);
  serve->add_option("--max-batch", a.max_batch);
  serve->add_option("--forward-latency-us", a.scorer.forward_latency_us)
      ->check(CLI::NonNegativeNumber);

  auto* train = app.add_subcommand("ngram-train", "Train an n-gram scorer on canonical tokens");
  add_common(train, a);
  train->add_option("--corpus", a.corpus_path, "Corpus JSON-lines file")->required();
  train->add_option("--order", a.order)->check(CLI::Range(2, 3));
  train->add_option("--add-k", a.add_k)->check(CLI::PositiveNumber);
  train->add_option("--output", a.output_path, "Model JSON output")->required();

  std::vector<const char*> argv{"tokmarg"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);  // --help
    app.exit(e, err, err);
    return kValidation;
  }

  try {
    return dispatch(app, a, out);
  } catch (const LimitError& e) {
    err << "limit exceeded: " << e.what() << '\n';
    return kLimit;
  } catch (const ScorerError& e) {
    err << "scorer error: " << e.what() << '\n';
    return kScorer;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace tokmarg::cli
