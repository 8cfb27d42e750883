#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <string>
#include <thread>

#include "tokmarg/scorer.hpp"

namespace tokmarg {

struct ScorerServerOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  std::size_t max_batch = 256;
  // Simulated model latency: every request sleeps this long once, so a
  // /v1/score batch costs one forward pass like on an accelerator.
  std::chrono::microseconds forward_latency{0};
};

// Serves a local Scorer over the scoring wire protocol. Used as a mock
// backend for the HTTP client and for end-to-end CLI runs.
class ScorerServer {
 public:
  ScorerServer(const Scorer& scorer, ScorerServerOptions options = {});
  ~ScorerServer();
  ScorerServer(const ScorerServer&) = delete;
  ScorerServer& operator=(const ScorerServer&) = delete;

  // Binds the listening socket (idempotent); returns the bound port.
  int bind();
  // Binds and serves on a background thread; returns the bound port.
  int start();
  // Binds and serves on the calling thread until stop().
  void run();
  void stop();

  int port() const { return port_; }
  std::string endpoint() const;

  std::uint64_t next_logprobs_requests() const { return next_requests_.load(); }
  std::uint64_t score_requests() const { return score_requests_.load(); }

 private:
  class Impl;

  void simulate_forward_pass() const;

  const Scorer& scorer_;
  ScorerServerOptions options_;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<std::uint64_t> next_requests_{0};
  std::atomic<std::uint64_t> score_requests_{0};
};

}  // namespace tokmarg
