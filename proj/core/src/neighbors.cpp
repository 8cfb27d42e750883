#include "tokmarg/neighbors.hpp"

#include <cassert>
#include <set>
#include <string_view>

namespace tokmarg {

std::vector<std::pair<TokenId, TokenId>> decompose(const Vocabulary& vocab, TokenId id) {
  const std::string_view piece = vocab.token(id);
  std::vector<std::pair<TokenId, TokenId>> out;
  for (std::size_t split = 1; split < piece.size(); ++split) {
    auto left = vocab.find(piece.substr(0, split));
    if (!left) continue;
    auto right = vocab.find(piece.substr(split));
    if (right) out.emplace_back(*left, *right);
  }
  return out;
}

OffByOneSet off_by_one(const Vocabulary& vocab, const Tokenization& canonical) {
  OffByOneSet result{canonical, {}};
  std::set<Tokenization> seen;
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    for (const auto& [left, right] : decompose(vocab, canonical[i])) {
      Tokenization member;
      member.reserve(canonical.size() + 1);
      member.insert(member.end(), canonical.begin(), canonical.begin() + static_cast<std::ptrdiff_t>(i));
      member.push_back(left);
      member.push_back(right);
      member.insert(member.end(), canonical.begin() + static_cast<std::ptrdiff_t>(i) + 1,
                    canonical.end());
      // Splits at distinct positions always differ: the left piece is a proper
      // prefix of the token it replaces.
      const bool fresh = seen.insert(member).second;
      assert(fresh);
      if (fresh) result.members.push_back(std::move(member));
    }
  }
  return result;
}

}  // namespace tokmarg
