#include "tokmarg/lattice.hpp"

#include <algorithm>
#include <limits>

#include <nlohmann/json.hpp>

#include "tokmarg/error.hpp"

namespace tokmarg {

const Lattice::Arc* Lattice::find_arc(std::size_t pos, TokenId token) const {
  if (pos >= size()) return nullptr;
  auto span = arcs(pos);
  auto it = std::lower_bound(span.begin(), span.end(), token,
                             [](const Arc& a, TokenId t) { return a.token < t; });
  if (it == span.end() || it->token != token) return nullptr;
  return &*it;
}

Lattice build_lattice(const Vocabulary& vocab, std::string_view text) {
  if (text.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw ValidationError("text too long");
  }
  Lattice lat;
  lat.text_ = std::string(text);
  const std::size_t n = text.size();
  lat.offsets_.reserve(n + 2);
  lat.offsets_.push_back(0);

  for (std::size_t i = 0; i < n; ++i) {
    vocab.byte_token(static_cast<unsigned char>(text[i]));  // throws if unrepresentable
    const std::size_t first = lat.arcs_.size();
    const std::size_t max_len = std::min(vocab.max_token_len(), n - i);
    for (std::size_t len = 1; len <= max_len; ++len) {
      if (auto id = vocab.find(text.substr(i, len))) {
        lat.arcs_.push_back({static_cast<std::uint32_t>(i + len), *id});
      }
    }
    std::sort(lat.arcs_.begin() + static_cast<std::ptrdiff_t>(first), lat.arcs_.end(),
              [](const Lattice::Arc& a, const Lattice::Arc& b) { return a.token < b.token; });
    lat.max_out_degree_ = std::max(lat.max_out_degree_, lat.arcs_.size() - first);
    lat.offsets_.push_back(lat.arcs_.size());
  }
  // Final state has no arcs.
  lat.offsets_.push_back(lat.arcs_.size());

  lat.counts_.assign(n + 1, BigInt(0));
  lat.counts_[n] = 1;
  for (std::size_t i = n; i-- > 0;) {
    BigInt total = 0;
    for (const auto& arc : lat.arcs(i)) total += lat.counts_[arc.end];
    lat.counts_[i] = std::move(total);
  }
  return lat;
}

bool contains(const Lattice& lattice, std::span<const TokenId> tokens) {
  std::size_t pos = 0;
  for (TokenId t : tokens) {
    const auto* arc = lattice.find_arc(pos, t);
    if (arc == nullptr) return false;
    pos = arc->end;
  }
  return pos == lattice.size();
}

BoundedLattice::BoundedLattice(Lattice base, std::size_t max_len)
    : base_(std::move(base)), max_len_(max_len) {
  const std::size_t n = base_.size();
  width_ = std::min(max_len_, n) + 1;
  table_.assign((n + 1) * width_, BigInt(0));
  for (std::size_t r = 0; r < width_; ++r) table_[n * width_ + r] = 1;
  for (std::size_t i = n; i-- > 0;) {
    // C[i][0] stays 0 for i < n.
    for (std::size_t r = 1; r < width_; ++r) {
      BigInt total = 0;
      for (const auto& arc : base_.arcs(i)) total += table_[arc.end * width_ + r - 1];
      table_[i * width_ + r] = std::move(total);
    }
  }
}

const BigInt& BoundedLattice::paths_within(std::size_t pos, std::size_t budget) const {
  return table_[pos * width_ + std::min(budget, width_ - 1)];
}

Tokenization unrank(const BoundedLattice& lattice, const BigInt& index) {
  if (index < 1 || index > lattice.num_paths()) {
    throw ValidationError("path index " + to_decimal(index) + " out of range [1, " +
                          to_decimal(lattice.num_paths()) + "]");
  }
  const Lattice& base = lattice.base();
  Tokenization out;
  BigInt remaining = index;
  std::size_t pos = 0;
  std::size_t budget = lattice.max_len();
  while (pos < base.size()) {
    bool moved = false;
    for (const auto& arc : base.arcs(pos)) {
      const BigInt& through = lattice.paths_within(arc.end, budget - 1);
      if (remaining <= through) {
        out.push_back(arc.token);
        pos = arc.end;
        --budget;
        moved = true;
        break;
      }
      remaining -= through;
    }
    if (!moved) throw std::logic_error("unrank: inconsistent path counts");
  }
  return out;
}

BigInt rank(const BoundedLattice& lattice, std::span<const TokenId> tokens) {
  if (tokens.size() > lattice.max_len()) {
    throw ValidationError("tokenization of length " + std::to_string(tokens.size()) +
                          " exceeds the length bound " + std::to_string(lattice.max_len()));
  }
  const Lattice& base = lattice.base();
  BigInt index = 1;
  std::size_t pos = 0;
  std::size_t budget = lattice.max_len();
  for (TokenId t : tokens) {
    if (pos >= base.size()) throw ValidationError("tokenization is not a lattice path");
    bool found = false;
    for (const auto& arc : base.arcs(pos)) {
      if (arc.token == t) {
        pos = arc.end;
        found = true;
        break;
      }
      index += lattice.paths_within(arc.end, budget - 1);
    }
    if (!found) throw ValidationError("tokenization is not a lattice path");
    --budget;
  }
  if (pos != base.size()) throw ValidationError("tokenization is not a lattice path");
  return index;
}

namespace {

void enumerate_from(const BoundedLattice& lattice, std::size_t pos, std::size_t budget,
                    Tokenization& prefix, std::vector<Tokenization>& out) {
  const Lattice& base = lattice.base();
  if (pos == base.size()) {
    out.push_back(prefix);
    return;
  }
  if (budget == 0) return;
  for (const auto& arc : base.arcs(pos)) {
    if (lattice.paths_within(arc.end, budget - 1) == 0) continue;
    prefix.push_back(arc.token);
    enumerate_from(lattice, arc.end, budget - 1, prefix, out);
    prefix.pop_back();
  }
}

}  // namespace

std::vector<Tokenization> enumerate_paths(const BoundedLattice& lattice, std::size_t limit) {
  if (lattice.num_paths() > limit) {
    throw LimitError("lattice has " + to_decimal(lattice.num_paths()) +
                     " paths, more than the enumeration limit " + std::to_string(limit));
  }
  std::vector<Tokenization> out;
  out.reserve(lattice.num_paths().convert_to<std::size_t>());
  if (lattice.num_paths() == 0) return out;
  Tokenization prefix;
  enumerate_from(lattice, 0, lattice.max_len(), prefix, out);
  return out;
}

nlohmann::json lattice_to_json(const Lattice& lattice) {
  nlohmann::json doc;
  doc["n"] = lattice.size();
  auto& arcs = doc["arcs"] = nlohmann::json::array();
  for (std::size_t i = 0; i < lattice.size(); ++i) {
    for (const auto& arc : lattice.arcs(i)) arcs.push_back({i, arc.end, arc.token});
  }
  doc["num_paths"] = to_decimal(count_paths(lattice));
  return doc;
}

}  // namespace tokmarg
