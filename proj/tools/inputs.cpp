#include "inputs.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tokmarg/error.hpp"
#include "tokmarg/http_scorer.hpp"

namespace tokmarg::cli {
namespace {

std::uint64_t parse_u64(std::string_view text, std::string_view what) {
  std::uint64_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ValidationError(std::string(what) + ": not an unsigned integer: '" + std::string(text) +
                          "'");
  }
  return value;
}

TokenId checked_id(std::uint64_t id, const Vocabulary& vocab) {
  if (id >= vocab.size()) {
    throw ValidationError("token id " + std::to_string(id) + " is outside the vocabulary");
  }
  return static_cast<TokenId>(id);
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(number, nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

}  // namespace

std::unique_ptr<Scorer> make_local_scorer(std::string_view spec, const Vocabulary& vocab) {
  if (spec == "builtin:uniform") return std::make_unique<UniformScorer>(vocab.size());
  if (spec.starts_with("builtin:hash:")) {
    const auto seed = parse_u64(spec.substr(13), "hash scorer seed");
    return std::make_unique<HashLM>(seed, vocab.size());
  }
  if (spec.starts_with("builtin:ngram:")) {
    auto model = NGramLM::load(std::string(spec.substr(14)));
    if (model.vocab_size() != vocab.size()) {
      throw ValidationError("n-gram model vocab_size " + std::to_string(model.vocab_size()) +
                            " does not match the vocabulary (" + std::to_string(vocab.size()) +
                            ")");
    }
    return std::make_unique<NGramLM>(std::move(model));
  }
  throw ValidationError("unknown scorer spec '" + std::string(spec) +
                        "' (expected builtin:hash:SEED, builtin:ngram:PATH, builtin:uniform or "
                        "http:URL)");
}

ScorerHandle make_scorer(std::string spec, const Vocabulary& vocab, bool serve_mock,
                         std::chrono::microseconds forward_latency) {
  if (spec.empty()) {
    const char* env = std::getenv(kScorerEnv);
    if (env == nullptr || *env == '\0') {
      throw ValidationError(std::string("no scorer given: pass --scorer or set ") + kScorerEnv);
    }
    spec = env;
  }
  HttpScorerOptions http_options;
  http_options.vocab_size = vocab.size();

  ScorerHandle handle;
  if (spec.starts_with("http:")) {
    if (serve_mock) throw ValidationError("--serve-mock needs a builtin scorer");
    std::string rest = spec.substr(5);
    handle.remote = http_scorer(rest.starts_with("//") ? "http:" + rest : rest, http_options);
    return handle;
  }
  handle.local = make_local_scorer(spec, vocab);
  if (serve_mock) {
    ScorerServerOptions server_options;
    server_options.forward_latency = forward_latency;
    handle.server = std::make_unique<ScorerServer>(*handle.local, server_options);
    handle.server->start();
    handle.remote = http_scorer(handle.server->endpoint(), http_options);
  }
  return handle;
}

Tokenization parse_id_list(std::string_view text, const Vocabulary& vocab) {
  Tokenization ids;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto start = text.find_first_not_of(", ", pos);
    if (start == std::string_view::npos) break;
    const auto end = std::min(text.find_first_of(", ", start), text.size());
    ids.push_back(checked_id(parse_u64(text.substr(start, end - start), "token id"), vocab));
    pos = end;
  }
  return ids;
}

Tokenization parse_context(const nlohmann::json& value, const Vocabulary& vocab) {
  if (value.is_null()) return {};
  if (value.is_string()) return canonical_tokenize(vocab, value.get<std::string>());
  if (!value.is_array()) throw ValidationError("context must be a string or an array of ids");
  Tokenization ids;
  for (const auto& v : value) {
    if (!v.is_number_unsigned()) throw ValidationError("context ids must be unsigned integers");
    ids.push_back(checked_id(v.get<std::uint64_t>(), vocab));
  }
  return ids;
}

std::vector<TaskItem> load_tasks(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::vector<TaskItem> items;
  for_each_json_line(path, [&](std::size_t line, const nlohmann::json& doc) {
    if (!doc.is_object()) throw ValidationError("task must be a JSON object");
    TaskItem item;
    item.line = line;
    item.context = parse_context(doc.value("context", nlohmann::json()), vocab);
    const auto& candidates = doc.at("candidates");
    if (!candidates.is_array() || candidates.empty()) {
      throw ValidationError("candidates must be a non-empty array");
    }
    for (const auto& c : candidates) {
      EstimateInput input;
      input.context = item.context;
      if (c.is_string()) {
        input.text = c.get<std::string>();
      } else if (c.is_object()) {
        input.text = c.at("text").get<std::string>();
        if (c.contains("canonical")) input.canonical = parse_context(c.at("canonical"), vocab);
      } else {
        throw ValidationError("candidate must be a string or {\"text\", \"canonical\"}");
      }
      item.candidates.push_back(std::move(input));
    }
    if (doc.contains("label") && !doc.at("label").is_null()) {
      const auto& label = doc.at("label");
      if (!label.is_number_unsigned() || label.get<std::size_t>() >= item.candidates.size()) {
        throw ValidationError("label must index a candidate");
      }
      item.label = label.get<std::size_t>();
    }
    items.push_back(std::move(item));
  });
  return items;
}

std::vector<StudyInput> load_corpus(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::vector<StudyInput> corpus;
  for_each_json_line(path, [&](std::size_t line, const nlohmann::json& doc) {
    if (!doc.is_object()) throw ValidationError("corpus entry must be a JSON object");
    StudyInput entry;
    entry.id = doc.contains("id") ? doc.at("id").get<std::string>() : "line-" + std::to_string(line);
    entry.input.context = parse_context(doc.value("context", nlohmann::json()), vocab);
    entry.input.text = doc.at("text").get<std::string>();
    if (doc.contains("canonical")) entry.input.canonical = parse_context(doc.at("canonical"), vocab);
    corpus.push_back(std::move(entry));
  });
  if (corpus.empty()) throw ValidationError(path.string() + ": corpus is empty");
  return corpus;
}

std::string corpus_text_of_length(std::span<const StudyInput> corpus, std::size_t n) {
  std::string out;
  for (std::size_t i = 0; out.size() < n; ++i) {
    const auto& text = corpus[i % corpus.size()].input.text;
    if (text.empty() && i >= corpus.size()) throw ValidationError("corpus texts are empty");
    if (!out.empty()) out += ' ';
    out += text;
  }
  out.resize(n);
  return out;
}

}  // namespace tokmarg::cli
