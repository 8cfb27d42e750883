#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tokmarg/error.hpp"
#include "tokmarg/scorer.hpp"

namespace tokmarg {

NGramLM::NGramLM(int order, std::size_t vocab_size, double add_k)
    : order_(order), vocab_size_(vocab_size), add_k_(add_k) {
  if (order != 2 && order != 3) throw ValidationError("n-gram order must be 2 or 3");
  if (!(add_k > 0.0)) throw ValidationError("add-k smoothing constant must be positive");
  if (vocab_size == 0) throw ValidationError("n-gram vocabulary must be non-empty");
}

Tokenization NGramLM::history_of(std::span<const TokenId> context) const {
  const auto width = static_cast<std::size_t>(order_ - 1);
  Tokenization h(width, bos());
  const std::size_t take = std::min(width, context.size());
  std::copy(context.end() - static_cast<std::ptrdiff_t>(take), context.end(),
            h.end() - static_cast<std::ptrdiff_t>(take));
  return h;
}

void NGramLM::add_count(const Tokenization& history, TokenId next, std::uint64_t count) {
  if (history.size() != static_cast<std::size_t>(order_ - 1)) {
    throw ValidationError("n-gram history has the wrong length");
  }
  if (next > vocab_size_) throw ValidationError("n-gram next token out of range");
  for (TokenId t : history) {
    if (t > vocab_size_ + 1 || t == vocab_size_) {
      throw ValidationError("n-gram history token out of range");
    }
  }
  auto& row = rows_[history];
  row.next[next] += count;
  row.total += count;
}

NGramLM NGramLM::train(int order, std::size_t vocab_size, double add_k,
                       std::span<const Tokenization> sentences) {
  NGramLM lm(order, vocab_size, add_k);
  for (const auto& sentence : sentences) {
    Tokenization prefix;
    for (TokenId t : sentence) {
      if (t >= vocab_size) throw ValidationError("training token out of vocabulary");
      lm.add_count(lm.history_of(prefix), t, 1);
      prefix.push_back(t);
    }
    lm.add_count(lm.history_of(prefix), lm.eos(), 1);
  }
  return lm;
}

std::vector<double> NGramLM::next_logprobs(std::span<const TokenId> context) const {
  const double outcomes = static_cast<double>(vocab_size_ + 1);
  auto it = rows_.find(history_of(context));
  if (it == rows_.end()) return std::vector<double>(vocab_size_ + 1, -std::log(outcomes));
  const Row& row = it->second;
  const double denom = std::log(static_cast<double>(row.total) + add_k_ * outcomes);
  std::vector<double> out(vocab_size_ + 1, std::log(add_k_) - denom);
  for (const auto& [tok, count] : row.next) {
    out[tok] = std::log(static_cast<double>(count) + add_k_) - denom;
  }
  return out;
}

nlohmann::json NGramLM::to_json() const {
  nlohmann::json doc;
  doc["format"] = "tokmarg-ngram/1";
  doc["order"] = order_;
  doc["vocab_size"] = vocab_size_;
  doc["add_k"] = add_k_;
  auto& rows = doc["rows"] = nlohmann::json::array();
  for (const auto& [history, row] : rows_) {
    nlohmann::json next = nlohmann::json::array();
    for (const auto& [tok, count] : row.next) next.push_back({tok, count});
    rows.push_back({{"history", history}, {"next", std::move(next)}});
  }
  return doc;
}

NGramLM NGramLM::from_json(const nlohmann::json& doc) {
  try {
    if (doc.value("format", "") != "tokmarg-ngram/1") {
      throw ValidationError("not a tokmarg n-gram model file");
    }
    NGramLM lm(doc.at("order").get<int>(), doc.at("vocab_size").get<std::size_t>(),
               doc.at("add_k").get<double>());
    for (const auto& row : doc.at("rows")) {
      const auto history = row.at("history").get<Tokenization>();
      for (const auto& entry : row.at("next")) {
        lm.add_count(history, entry.at(0).get<TokenId>(), entry.at(1).get<std::uint64_t>());
      }
    }
    return lm;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed n-gram model: ") + e.what());
  }
}

NGramLM NGramLM::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open n-gram model " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed n-gram model " + path.string() + ": " + e.what());
  }
  return from_json(doc);
}

void NGramLM::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write n-gram model " + path.string());
  out << to_json().dump() << '\n';
}

}  // namespace tokmarg
