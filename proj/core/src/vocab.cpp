#include "tokmarg/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "tokmarg/error.hpp"

namespace tokmarg {
namespace {

std::uint64_t pair_key(TokenId left, TokenId right) {
  return (static_cast<std::uint64_t>(left) << 32) | right;
}

std::string printable(std::string_view bytes) {
  std::string out;
  for (unsigned char c : bytes) {
    if (c >= 0x20 && c < 0x7f) {
      out.push_back(static_cast<char>(c));
    } else {
      static constexpr char kHex[] = "0123456789abcdef";
      out += "\\x";
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0xf]);
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(CanonicalPolicy policy) {
  switch (policy) {
    case CanonicalPolicy::kLongestMatch:
      return "longest-match";
    case CanonicalPolicy::kBpeMerges:
      return "bpe-merges";
    case CanonicalPolicy::kExternal:
      return "external";
  }
  return "unknown";
}

CanonicalPolicy parse_canonical_policy(std::string_view name) {
  if (name == "longest-match") return CanonicalPolicy::kLongestMatch;
  if (name == "bpe-merges") return CanonicalPolicy::kBpeMerges;
  if (name == "external") return CanonicalPolicy::kExternal;
  throw ValidationError("unknown canonical_policy '" + std::string(name) + "'");
}

Vocabulary Vocabulary::create(std::vector<std::string> tokens, CanonicalPolicy policy,
                              std::vector<Merge> merges, bool complete_alphabet) {
  if (tokens.size() >= std::numeric_limits<TokenId>::max()) {
    throw ValidationError("vocabulary too large");
  }
  Vocabulary v;
  v.policy_ = policy;
  v.byte_token_.fill(kNoToken);

  for (std::size_t id = 0; id < tokens.size(); ++id) {
    const std::string& tok = tokens[id];
    if (tok.empty()) {
      throw ValidationError("empty token at id " + std::to_string(id));
    }
    auto [it, inserted] = v.index_.emplace(tok, static_cast<TokenId>(id));
    if (!inserted) {
      throw ValidationError("duplicate token '" + printable(tok) + "' at ids " +
                            std::to_string(it->second) + " and " + std::to_string(id));
    }
    if (tok.size() == 1) {
      v.byte_token_[static_cast<unsigned char>(tok[0])] = static_cast<TokenId>(id);
    }
  }
  v.tokens_ = std::move(tokens);

  std::array<bool, 256> used{};
  for (const auto& tok : v.tokens_) {
    for (unsigned char c : tok) used[c] = true;
  }
  for (int b = 0; b < 256; ++b) {
    if (!used[b] || v.byte_token_[b] != kNoToken) continue;
    if (!complete_alphabet) {
      throw ValidationError("alphabet incomplete: byte '" +
                            printable(std::string(1, static_cast<char>(b))) +
                            "' occurs in a token but is not itself a token");
    }
    const auto id = static_cast<TokenId>(v.tokens_.size());
    v.tokens_.emplace_back(1, static_cast<char>(b));
    v.index_.emplace(v.tokens_.back(), id);
    v.byte_token_[b] = id;
  }

  for (const auto& tok : v.tokens_) v.max_token_len_ = std::max(v.max_token_len_, tok.size());

  // Each merge operand must be a byte or the product of an earlier merge, so
  // applying merges by rank is well defined.
  std::vector<bool> producible(v.tokens_.size(), false);
  for (std::size_t id = 0; id < v.tokens_.size(); ++id) {
    producible[id] = v.tokens_[id].size() == 1;
  }
  for (std::size_t rank = 0; rank < merges.size(); ++rank) {
    const auto [left, right] = merges[rank];
    if (left >= v.tokens_.size() || right >= v.tokens_.size()) {
      throw ValidationError("malformed merges: rank " + std::to_string(rank) +
                            " references an unknown token id");
    }
    if (!producible[left] || !producible[right]) {
      throw ValidationError("malformed merges: rank " + std::to_string(rank) +
                            " uses a token not produced by an earlier merge");
    }
    auto merged = v.find(v.tokens_[left] + v.tokens_[right]);
    if (!merged) {
      throw ValidationError("malformed merges: rank " + std::to_string(rank) + " result '" +
                            printable(v.tokens_[left] + v.tokens_[right]) +
                            "' is not a token");
    }
    producible[*merged] = true;
    v.merge_ranks_.emplace(pair_key(left, right), rank);
  }
  v.merges_ = std::move(merges);
  return v;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw ValidationError("unknown token id " + std::to_string(id));
  }
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::byte_token(unsigned char byte) const {
  if (byte_token_[byte] == kNoToken) {
    throw ValidationError("unrepresentable byte '" +
                          printable(std::string(1, static_cast<char>(byte))) + "'");
  }
  return byte_token_[byte];
}

std::optional<std::size_t> Vocabulary::merge_rank(TokenId left, TokenId right) const {
  auto it = merge_ranks_.find(pair_key(left, right));
  if (it == merge_ranks_.end()) return std::nullopt;
  return it->second;
}

std::string latin1_to_bytes(std::string_view utf8) {
  std::string out;
  out.reserve(utf8.size());
  for (std::size_t i = 0; i < utf8.size(); ++i) {
    const auto c = static_cast<unsigned char>(utf8[i]);
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
      continue;
    }
    // Only two-byte sequences encode U+0080..U+00FF.
    if ((c & 0xe0) != 0xc0 || i + 1 >= utf8.size()) {
      throw ValidationError("token string contains a code point above U+00FF");
    }
    const auto c2 = static_cast<unsigned char>(utf8[i + 1]);
    if ((c2 & 0xc0) != 0x80) throw ValidationError("invalid UTF-8 in token string");
    const unsigned cp = ((c & 0x1fu) << 6) | (c2 & 0x3fu);
    if (cp < 0x80 || cp > 0xff) {
      throw ValidationError("token string contains a code point above U+00FF");
    }
    out.push_back(static_cast<char>(cp));
    ++i;
  }
  return out;
}

std::string bytes_to_latin1(std::string_view bytes) {
  std::string out;
  out.reserve(bytes.size());
  for (unsigned char c : bytes) {
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back(static_cast<char>(0xc0 | (c >> 6)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3f)));
    }
  }
  return out;
}

Vocabulary parse_vocabulary(const nlohmann::json& doc) {
  try {
    if (!doc.is_object()) throw ValidationError("vocabulary file must be a JSON object");
    if (!doc.contains("tokens") || !doc.at("tokens").is_array()) {
      throw ValidationError("vocabulary file requires a \"tokens\" array");
    }
    std::vector<std::string> tokens;
    tokens.reserve(doc.at("tokens").size());
    for (const auto& t : doc.at("tokens")) {
      if (!t.is_string()) throw ValidationError("tokens must be strings");
      tokens.push_back(latin1_to_bytes(t.get<std::string>()));
    }

    const auto policy = parse_canonical_policy(doc.value("canonical_policy", "longest-match"));
    const bool complete = doc.value("complete_alphabet", false);
    const bool has_merges = doc.contains("merges");
    if (has_merges != (policy == CanonicalPolicy::kBpeMerges)) {
      throw ValidationError(
          "malformed merges: \"merges\" must be present exactly when canonical_policy is "
          "bpe-merges");
    }

    // Merge operands are resolved after alphabet completion.
    std::vector<std::pair<std::string, std::string>> merge_pieces;
    if (has_merges) {
      const auto& ms = doc.at("merges");
      if (!ms.is_array()) throw ValidationError("malformed merges: expected an array");
      for (const auto& m : ms) {
        if (!m.is_array() || m.size() != 2 || !m[0].is_string() || !m[1].is_string()) {
          throw ValidationError("malformed merges: each merge must be a pair of strings");
        }
        merge_pieces.emplace_back(latin1_to_bytes(m[0].get<std::string>()),
                                  latin1_to_bytes(m[1].get<std::string>()));
      }
    }

    auto base = Vocabulary::create(std::move(tokens), policy, {}, complete);
    if (merge_pieces.empty()) return base;
    std::vector<Merge> merges;
    merges.reserve(merge_pieces.size());
    for (const auto& [l, r] : merge_pieces) {
      auto li = base.find(l);
      auto ri = base.find(r);
      if (!li || !ri) {
        throw ValidationError("malformed merges: operand '" + printable(!li ? l : r) +
                              "' is not a token");
      }
      merges.emplace_back(*li, *ri);
    }
    return Vocabulary::create(base.tokens(), policy, std::move(merges), false);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed vocabulary file: ") + e.what());
  }
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open vocabulary file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed vocabulary file " + path.string() + ": " + e.what());
  }
  return parse_vocabulary(doc);
}

nlohmann::json vocabulary_to_json(const Vocabulary& vocab) {
  nlohmann::json doc;
  auto& toks = doc["tokens"] = nlohmann::json::array();
  for (const auto& t : vocab.tokens()) toks.push_back(bytes_to_latin1(t));
  doc["canonical_policy"] = std::string(to_string(vocab.policy()));
  doc["complete_alphabet"] = false;
  if (vocab.policy() == CanonicalPolicy::kBpeMerges) {
    auto& ms = doc["merges"] = nlohmann::json::array();
    for (const auto& [l, r] : vocab.merges()) {
      ms.push_back({bytes_to_latin1(vocab.token(l)), bytes_to_latin1(vocab.token(r))});
    }
  }
  return doc;
}

namespace {

Tokenization longest_match(const Vocabulary& vocab, std::string_view text) {
  Tokenization out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t max_len = std::min(vocab.max_token_len(), text.size() - pos);
    bool matched = false;
    for (std::size_t len = max_len; len >= 1; --len) {
      if (auto id = vocab.find(text.substr(pos, len))) {
        out.push_back(*id);
        pos += len;
        matched = true;
        break;
      }
    }
    if (!matched) vocab.byte_token(static_cast<unsigned char>(text[pos]));  // throws
  }
  return out;
}

Tokenization bpe_merges(const Vocabulary& vocab, std::string_view text) {
  Tokenization seq;
  seq.reserve(text.size());
  for (char c : text) seq.push_back(vocab.byte_token(static_cast<unsigned char>(c)));

  while (seq.size() > 1) {
    std::optional<std::size_t> best;
    TokenId best_l = 0;
    TokenId best_r = 0;
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      auto r = vocab.merge_rank(seq[i], seq[i + 1]);
      if (r && (!best || *r < *best)) {
        best = r;
        best_l = seq[i];
        best_r = seq[i + 1];
      }
    }
    if (!best) break;
    const TokenId merged = *vocab.find(vocab.token(best_l) + vocab.token(best_r));
    Tokenization next;
    next.reserve(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i + 1 < seq.size() && seq[i] == best_l && seq[i + 1] == best_r) {
        next.push_back(merged);
        ++i;
      } else {
        next.push_back(seq[i]);
      }
    }
    seq = std::move(next);
  }
  return seq;
}

}  // namespace

Tokenization canonical_tokenize(const Vocabulary& vocab, std::string_view text) {
  switch (vocab.policy()) {
    case CanonicalPolicy::kLongestMatch:
      return longest_match(vocab, text);
    case CanonicalPolicy::kBpeMerges:
      return bpe_merges(vocab, text);
    case CanonicalPolicy::kExternal:
      break;
  }
  throw ValidationError(
      "vocabulary uses the external canonical policy; supply the canonical tokenization");
}

std::string detokenize(const Vocabulary& vocab, std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) out += vocab.token(id);
  return out;
}

}  // namespace tokmarg
