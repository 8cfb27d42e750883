#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace tokmarg {

using TokenId = std::uint32_t;

// A token sequence. Valid for a text when its detokenization equals the text.
using Tokenization = std::vector<TokenId>;

enum class CanonicalPolicy { kLongestMatch, kBpeMerges, kExternal };

std::string_view to_string(CanonicalPolicy policy);
CanonicalPolicy parse_canonical_policy(std::string_view name);

using Merge = std::pair<TokenId, TokenId>;

// Immutable token table over byte strings. Every byte that occurs in any
// token is itself a single-byte token, so every text over the alphabet has at
// least one tokenization.
class Vocabulary {
 public:
  // Throws ValidationError on duplicate or empty tokens, an incomplete
  // alphabet (unless complete_alphabet, which appends the missing single-byte
  // tokens in ascending byte order), or malformed merges.
  static Vocabulary create(std::vector<std::string> tokens,
                           CanonicalPolicy policy = CanonicalPolicy::kLongestMatch,
                           std::vector<Merge> merges = {},
                           bool complete_alphabet = false);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view piece) const;

  bool in_alphabet(unsigned char byte) const { return byte_token_[byte] != kNoToken; }
  TokenId byte_token(unsigned char byte) const;

  std::size_t max_token_len() const { return max_token_len_; }
  CanonicalPolicy policy() const { return policy_; }
  const std::vector<Merge>& merges() const { return merges_; }
  // Rank of merging (left, right), if that pair is a merge rule.
  std::optional<std::size_t> merge_rank(TokenId left, TokenId right) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  static constexpr TokenId kNoToken = static_cast<TokenId>(-1);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::array<TokenId, 256> byte_token_{};
  std::size_t max_token_len_ = 0;
  CanonicalPolicy policy_ = CanonicalPolicy::kLongestMatch;
  std::vector<Merge> merges_;
  std::unordered_map<std::uint64_t, std::size_t> merge_ranks_;
};

// Vocabulary file:
//   {"tokens": [...], "merges": [["a","b"], ...], "canonical_policy": "...",
//    "complete_alphabet": bool}
// Token strings are Latin-1 code points standing for raw bytes.
Vocabulary load_vocabulary(const std::filesystem::path& path);
Vocabulary parse_vocabulary(const nlohmann::json& doc);
nlohmann::json vocabulary_to_json(const Vocabulary& vocab);

// "\u00XX" code points <-> raw bytes. Code points above U+00FF are rejected.
std::string latin1_to_bytes(std::string_view utf8);
std::string bytes_to_latin1(std::string_view bytes);

// Throws ValidationError for bytes outside the alphabet, or for the external
// policy (callers must supply the canonical sequence themselves).
Tokenization canonical_tokenize(const Vocabulary& vocab, std::string_view text);

std::string detokenize(const Vocabulary& vocab, std::span<const TokenId> ids);

}  // namespace tokmarg
