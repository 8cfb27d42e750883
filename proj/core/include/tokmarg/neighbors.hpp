#pragma once

#include <utility>
#include <vector>

#include "tokmarg/vocab.hpp"

namespace tokmarg {

// Off-by-one tokenizations: the canonical sequence with exactly one token
// replaced by a two-token split of itself. At most max_token_len * |canonical|
// members, each one token longer than the canonical.
struct OffByOneSet {
  Tokenization canonical;
  std::vector<Tokenization> members;
};

// Ordered pairs (l, r) of tokens with token(l) + token(r) == token(id), by
// split position ascending.
std::vector<std::pair<TokenId, TokenId>> decompose(const Vocabulary& vocab, TokenId id);

// Members ordered by replaced position, then split position.
OffByOneSet off_by_one(const Vocabulary& vocab, const Tokenization& canonical);

}  // namespace tokmarg
