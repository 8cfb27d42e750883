#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tokmarg/analysis.hpp"
#include "tokmarg/scorer.hpp"
#include "tokmarg/scorer_server.hpp"
#include "tokmarg/vocab.hpp"

namespace tokmarg::cli {

inline constexpr const char* kScorerEnv = "TOKMARG_SCORER";

// A scorer built from a spec string plus whatever keeps it alive.
struct ScorerHandle {
  std::unique_ptr<Scorer> local;
  std::unique_ptr<ScorerServer> server;
  std::unique_ptr<Scorer> remote;

  const Scorer& get() const { return remote ? *remote : *local; }
};

// builtin:hash:SEED | builtin:ngram:PATH | builtin:uniform | http:URL
// An empty spec falls back to $TOKMARG_SCORER. With `serve_mock`, a builtin
// scorer is exposed through an in-process ScorerServer and used over HTTP.
ScorerHandle make_scorer(std::string spec, const Vocabulary& vocab, bool serve_mock = false,
                         std::chrono::microseconds forward_latency = {});

// Builtin scorers only; http specs are rejected.
std::unique_ptr<Scorer> make_local_scorer(std::string_view spec, const Vocabulary& vocab);

// "3,1,4" or "3 1 4"; every id must be below vocab.size().
Tokenization parse_id_list(std::string_view text, const Vocabulary& vocab);

// JSON string (tokenized canonically) or array of ids.
Tokenization parse_context(const nlohmann::json& value, const Vocabulary& vocab);

struct TaskItem {
  std::size_t line = 0;
  Tokenization context;
  std::vector<EstimateInput> candidates;
  std::optional<std::size_t> label;
};

// JSON-lines of {"context", "candidates": [text | {"text", "canonical"}], "label"?}.
// Blank lines are skipped; errors name the offending line.
std::vector<TaskItem> load_tasks(const std::filesystem::path& path, const Vocabulary& vocab);

// JSON-lines of {"id"?, "context"?, "text"}; ids default to "line-N".
std::vector<StudyInput> load_corpus(const std::filesystem::path& path, const Vocabulary& vocab);

// Texts of exactly n bytes cut from the corpus texts joined by single spaces,
// cycling through the corpus as needed.
std::string corpus_text_of_length(std::span<const StudyInput> corpus, std::size_t n);

}  // namespace tokmarg::cli
