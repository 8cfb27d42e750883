#include <cstring>
#include <mutex>

#include <sodium.h>

#include "tokmarg/error.hpp"
#include "tokmarg/logmath.hpp"
#include "tokmarg/scorer.hpp"

namespace tokmarg {
namespace {

void ensure_sodium() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (sodium_init() < 0) throw ScorerError("libsodium initialization failed");
  });
}

void put_le(std::vector<unsigned char>& buf, std::uint64_t value, int bytes) {
  for (int i = 0; i < bytes; ++i) buf.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

}  // namespace

HashLM::HashLM(std::uint64_t seed, std::size_t vocab_size, double temperature)
    : seed_(seed), vocab_size_(vocab_size), temperature_(temperature) {
  if (!(temperature > 0.0)) throw ValidationError("HashLM temperature must be positive");
  if (vocab_size == 0) throw ValidationError("HashLM vocabulary must be non-empty");
  ensure_sodium();
}

std::vector<double> HashLM::next_logprobs(std::span<const TokenId> context) const {
  std::vector<unsigned char> message;
  message.reserve(8 + 4 * context.size());
  put_le(message, seed_, 8);
  for (TokenId t : context) put_le(message, t, 4);

  unsigned char key[crypto_shorthash_KEYBYTES];
  static_assert(crypto_shorthash_KEYBYTES >= crypto_generichash_BYTES_MIN);
  crypto_generichash(key, sizeof key, message.data(), message.size(), nullptr, 0);

  std::vector<double> logits(vocab_size_ + 1);
  for (std::size_t j = 0; j <= vocab_size_; ++j) {
    unsigned char in[4];
    for (int b = 0; b < 4; ++b) in[b] = static_cast<unsigned char>(j >> (8 * b));
    unsigned char out[crypto_shorthash_BYTES];
    crypto_shorthash(out, in, sizeof in, key);
    std::uint64_t h = 0;
    for (int b = 7; b >= 0; --b) h = (h << 8) | out[b];
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    logits[j] = u / temperature_;
  }
  const double log_norm = log_sum_exp(logits);
  for (double& l : logits) l -= log_norm;
  return logits;
}

}  // namespace tokmarg
