#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tokmarg/bigint.hpp"
#include "tokmarg/vocab.hpp"

namespace tokmarg {

// DAG over byte positions 0..n of a text. An arc i -> j labelled t exists iff
// text[i, j) is the token t. Paths 0 -> n are exactly the tokenizations of the
// text. Arcs leaving a state are sorted by token id, which fixes the path
// order used by rank/unrank.
class Lattice {
 public:
  struct Arc {
    std::uint32_t end;
    TokenId token;
  };

  std::size_t size() const { return text_.size(); }
  const std::string& text() const { return text_; }
  std::size_t max_out_degree() const { return max_out_degree_; }
  std::size_t num_arcs() const { return arcs_.size(); }

  std::span<const Arc> arcs(std::size_t pos) const {
    return {arcs_.data() + offsets_[pos], offsets_[pos + 1] - offsets_[pos]};
  }

  // Arc leaving `pos` with this label, or nullptr.
  const Arc* find_arc(std::size_t pos, TokenId token) const;

  // Number of paths from `pos` to the final state; paths_from(n) == 1.
  const BigInt& paths_from(std::size_t pos) const { return counts_[pos]; }

 private:
  friend Lattice build_lattice(const Vocabulary& vocab, std::string_view text);

  std::string text_;
  std::vector<std::size_t> offsets_;
  std::vector<Arc> arcs_;
  std::vector<BigInt> counts_;
  std::size_t max_out_degree_ = 0;
};

// Throws ValidationError when a byte of the text is not in the alphabet.
Lattice build_lattice(const Vocabulary& vocab, std::string_view text);

inline const BigInt& count_paths(const Lattice& lattice) { return lattice.paths_from(0); }

// True iff `tokens` labels a path from 0 to n.
bool contains(const Lattice& lattice, std::span<const TokenId> tokens);

// Paths of a lattice restricted to at most max_len arcs, as a counting table
// C[i][r] = number of paths i -> n using at most r arcs. No product automaton
// is materialized.
class BoundedLattice {
 public:
  BoundedLattice(Lattice base, std::size_t max_len);

  const Lattice& base() const { return base_; }
  std::size_t max_len() const { return max_len_; }

  // C[pos][budget]; budgets beyond n are clamped since no path is longer.
  const BigInt& paths_within(std::size_t pos, std::size_t budget) const;

  // C[0][max_len].
  const BigInt& num_paths() const { return paths_within(0, max_len_); }

 private:
  Lattice base_;
  std::size_t max_len_;
  std::size_t width_;  // min(max_len, n) + 1
  std::vector<BigInt> table_;
};

inline BoundedLattice bound_length(Lattice lattice, std::size_t max_len) {
  return BoundedLattice(std::move(lattice), max_len);
}

// index-th path (1-based) in lexicographic token-id order.
// Throws ValidationError unless 1 <= index <= num_paths().
Tokenization unrank(const BoundedLattice& lattice, const BigInt& index);

// Inverse of unrank. Throws ValidationError if the sequence is not a path or
// is longer than max_len.
BigInt rank(const BoundedLattice& lattice, std::span<const TokenId> tokens);

// All paths in rank order. Throws LimitError if there are more than `limit`.
std::vector<Tokenization> enumerate_paths(const BoundedLattice& lattice, std::size_t limit);

// {"n": int, "arcs": [[i, j, token], ...], "num_paths": "decimal"}
nlohmann::json lattice_to_json(const Lattice& lattice);

}  // namespace tokmarg
