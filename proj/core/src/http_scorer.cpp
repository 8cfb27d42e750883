#include "tokmarg/http_scorer.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tokmarg/error.hpp"
#include "tokmarg/logmath.hpp"

namespace tokmarg {
namespace {

struct ParsedEndpoint {
  std::string scheme_host_port;
  std::string base_path;
};

ParsedEndpoint parse_endpoint(const std::string& endpoint) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos || endpoint.compare(0, scheme_end, "http") != 0) {
    throw ValidationError("scorer endpoint must be an http:// URL, got '" + endpoint + "'");
  }
  const auto path_start = endpoint.find('/', scheme_end + 3);
  ParsedEndpoint out;
  if (path_start == std::string::npos) {
    out.scheme_host_port = endpoint;
  } else {
    out.scheme_host_port = endpoint.substr(0, path_start);
    out.base_path = endpoint.substr(path_start);
    while (!out.base_path.empty() && out.base_path.back() == '/') out.base_path.pop_back();
  }
  if (out.scheme_host_port.size() <= scheme_end + 3) {
    throw ValidationError("scorer endpoint has no host: '" + endpoint + "'");
  }
  return out;
}

std::vector<double> parse_logprobs(const nlohmann::json& body, const std::string& what) {
  if (!body.is_object() || !body.contains("logprobs") || !body.at("logprobs").is_array()) {
    throw ScorerError(what + ": response lacks a \"logprobs\" array");
  }
  std::vector<double> out;
  out.reserve(body.at("logprobs").size());
  for (const auto& v : body.at("logprobs")) {
    if (v.is_null()) {
      out.push_back(kNegInf);  // JSON cannot carry -inf
    } else if (v.is_number()) {
      out.push_back(v.get<double>());
    } else {
      throw ScorerError(what + ": non-numeric log-probability");
    }
  }
  return out;
}

// Runs job(i) for i in [0, count) on up to `width` threads.
template <typename Job>
void fan_out(std::size_t count, std::size_t width, Job&& job) {
  if (count == 0) return;
  width = std::max<std::size_t>(1, std::min(width, count));
  if (width == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  std::vector<std::thread> workers;
  workers.reserve(width);
  for (std::size_t w = 0; w < width; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

class HttpScorer::Connection {
 public:
  Connection(const ParsedEndpoint& endpoint, const HttpScorerOptions& options)
      : client_(endpoint.scheme_host_port),
        origin_(endpoint.scheme_host_port),
        base_path_(endpoint.base_path) {
    const auto secs = static_cast<time_t>(options.timeout.count());
    client_.set_connection_timeout(secs);
    client_.set_read_timeout(secs);
    client_.set_write_timeout(secs);
    client_.set_keep_alive(true);
    client_.set_tcp_nodelay(true);
  }

  nlohmann::json post(const std::string& path, const nlohmann::json& request,
                      const HttpScorerOptions& options) {
    const std::string body = request.dump();
    const std::string target = base_path_ + path;
    const std::string url = origin_ + target;
    std::string last_failure;
    auto backoff = options.initial_backoff;
    for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
      if (attempt > 1) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      auto res = client_.Post(target, body, "application/json");
      if (!res) {
        last_failure = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_failure = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        std::string detail = res->body;
        try {
          auto err = nlohmann::json::parse(res->body);
          if (err.is_object() && err.contains("error")) detail = err.at("error").dump();
        } catch (const nlohmann::json::exception&) {
        }
        throw ScorerError("POST " + url + " (context of " + context_size(request) +
                          " tokens) failed with HTTP " + std::to_string(res->status) + ": " +
                          detail);
      }
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw ScorerError("POST " + url + ": malformed JSON response: " + e.what());
      }
    }
    throw ScorerError("POST " + url + " (context of " + context_size(request) +
                      " tokens) failed after " + std::to_string(options.max_attempts) +
                      " attempts: " + last_failure);
  }

 private:
  static std::string context_size(const nlohmann::json& request) {
    return std::to_string(request.contains("context") ? request.at("context").size() : 0);
  }

  httplib::Client client_;
  std::string origin_;
  std::string base_path_;
};

// Bounded set of keep-alive connections; at most max_in_flight requests run
// concurrently across all callers.
class HttpScorer::Pool {
 public:
  Pool(ParsedEndpoint endpoint, const HttpScorerOptions& options)
      : endpoint_(std::move(endpoint)), options_(options) {}

  template <typename Fn>
  auto with_connection(Fn&& fn) {
    std::unique_ptr<Connection> conn;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return !idle_.empty() || open_ < options_.max_in_flight; });
      if (!idle_.empty()) {
        conn = std::move(idle_.back());
        idle_.pop_back();
      } else {
        ++open_;
      }
    }
    if (!conn) conn = std::make_unique<Connection>(endpoint_, options_);
    struct Return {
      Pool& pool;
      std::unique_ptr<Connection>& conn;
      ~Return() {
        {
          std::lock_guard lock(pool.mutex_);
          pool.idle_.push_back(std::move(conn));
        }
        pool.cv_.notify_one();
      }
    } give_back{*this, conn};
    return fn(*conn);
  }

 private:
  ParsedEndpoint endpoint_;
  const HttpScorerOptions& options_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::vector<std::unique_ptr<Connection>> idle_;
  std::size_t open_ = 0;
};

HttpScorer::HttpScorer(std::string endpoint, HttpScorerOptions options)
    : options_(std::move(options)) {
  if (options_.vocab_size == 0) throw ValidationError("HTTP scorer needs a vocabulary size");
  if (options_.batch_size == 0) throw ValidationError("HTTP scorer batch size must be positive");
  if (options_.max_in_flight == 0) options_.max_in_flight = 1;
  if (options_.max_attempts < 1) options_.max_attempts = 1;
  pool_ = std::make_unique<Pool>(parse_endpoint(endpoint), options_);
}

HttpScorer::~HttpScorer() = default;

std::vector<double> HttpScorer::next_logprobs(std::span<const TokenId> context) const {
  nlohmann::json request{{"context", std::vector<TokenId>(context.begin(), context.end())}};
  auto body = pool_->with_connection(
      [&](Connection& c) { return c.post("/v1/next_logprobs", request, options_); });
  auto lp = parse_logprobs(body, "POST /v1/next_logprobs");
  check_normalized(lp, options_.vocab_size, options_.normalization_tolerance);
  return lp;
}

std::vector<std::vector<double>> HttpScorer::next_logprobs_batch(
    std::span<const Tokenization> contexts) const {
  std::vector<std::vector<double>> out(contexts.size());
  fan_out(contexts.size(), options_.max_in_flight,
          [&](std::size_t i) { out[i] = next_logprobs(contexts[i]); });
  return out;
}

std::vector<double> HttpScorer::score(std::span<const TokenId> context,
                                      std::span<const Tokenization> sequences,
                                      bool include_eos) const {
  for (const auto& seq : sequences) {
    for (TokenId t : seq) {
      if (t >= options_.vocab_size) throw ValidationError("token id out of scorer vocabulary");
    }
  }
  const std::size_t batches = (sequences.size() + options_.batch_size - 1) / options_.batch_size;
  std::vector<double> out(sequences.size());
  const std::vector<TokenId> ctx(context.begin(), context.end());
  fan_out(batches, options_.max_in_flight, [&](std::size_t b) {
    const std::size_t lo = b * options_.batch_size;
    const std::size_t hi = std::min(sequences.size(), lo + options_.batch_size);
    nlohmann::json request{{"context", ctx},
                           {"sequences", nlohmann::json::array()},
                           {"include_eos", include_eos}};
    for (std::size_t i = lo; i < hi; ++i) request["sequences"].push_back(sequences[i]);
    auto body =
        pool_->with_connection([&](Connection& c) { return c.post("/v1/score", request, options_); });
    auto lp = parse_logprobs(body, "POST /v1/score");
    if (lp.size() != hi - lo) {
      throw ScorerError("POST /v1/score: expected " + std::to_string(hi - lo) +
                        " totals, got " + std::to_string(lp.size()));
    }
    for (std::size_t i = lo; i < hi; ++i) {
      if (std::isnan(lp[i - lo]) || lp[i - lo] > 1e-9) {
        throw ScorerError("POST /v1/score: invalid sequence log-probability");
      }
      out[i] = lp[i - lo];
    }
  });
  return out;
}

std::unique_ptr<Scorer> http_scorer(const std::string& endpoint, HttpScorerOptions options) {
  return std::make_unique<HttpScorer>(endpoint, std::move(options));
}

}  // namespace tokmarg
