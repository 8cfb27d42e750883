#include "tokmarg/scorer_server.hpp"

#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tokmarg/error.hpp"

namespace tokmarg {
namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
}

Tokenization parse_ids(const nlohmann::json& value, std::size_t vocab_size,
                       const char* field) {
  if (!value.is_array()) throw ValidationError(std::string(field) + " must be an array of ids");
  Tokenization ids;
  ids.reserve(value.size());
  for (const auto& v : value) {
    if (!v.is_number_unsigned() || v.get<std::uint64_t>() >= vocab_size) {
      throw ValidationError(std::string(field) + " contains an invalid token id");
    }
    ids.push_back(v.get<TokenId>());
  }
  return ids;
}

nlohmann::json logprobs_body(const std::vector<double>& values) {
  return nlohmann::json{{"logprobs", values}};
}

}  // namespace

class ScorerServer::Impl {
 public:
  httplib::Server server;
};

ScorerServer::ScorerServer(const Scorer& scorer, ScorerServerOptions options)
    : scorer_(scorer), options_(std::move(options)), impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;
  srv.set_tcp_nodelay(true);

  srv.Post("/v1/next_logprobs", [this](const httplib::Request& req, httplib::Response& res) {
    ++next_requests_;
    simulate_forward_pass();
    try {
      const auto body = nlohmann::json::parse(req.body);
      const auto context = parse_ids(body.at("context"), scorer_.vocab_size(), "context");
      res.set_content(logprobs_body(scorer_.next_logprobs(context)).dump(), "application/json");
    } catch (const std::exception& e) {
      send_error(res, 400, e.what());
    }
  });

  srv.Post("/v1/score", [this](const httplib::Request& req, httplib::Response& res) {
    ++score_requests_;
    simulate_forward_pass();
    try {
      const auto body = nlohmann::json::parse(req.body);
      const auto context = parse_ids(body.at("context"), scorer_.vocab_size(), "context");
      const auto& seqs = body.at("sequences");
      if (!seqs.is_array()) throw ValidationError("sequences must be an array");
      if (seqs.size() > options_.max_batch) {
        send_error(res, 503, "batch of " + std::to_string(seqs.size()) +
                                 " sequences exceeds the server limit");
        return;
      }
      std::vector<Tokenization> sequences;
      sequences.reserve(seqs.size());
      for (const auto& s : seqs) sequences.push_back(parse_ids(s, scorer_.vocab_size(), "sequence"));
      const bool include_eos = body.value("include_eos", false);
      res.set_content(logprobs_body(scorer_.score(context, sequences, include_eos)).dump(),
                      "application/json");
    } catch (const std::exception& e) {
      send_error(res, 400, e.what());
    }
  });
}

ScorerServer::~ScorerServer() { stop(); }

void ScorerServer::simulate_forward_pass() const {
  if (options_.forward_latency.count() > 0) std::this_thread::sleep_for(options_.forward_latency);
}

int ScorerServer::bind() {
  if (port_ >= 0) return port_;
  if (options_.port == 0) {
    port_ = impl_->server.bind_to_any_port(options_.host);
  } else {
    port_ = impl_->server.bind_to_port(options_.host, options_.port) ? options_.port : -1;
  }
  if (port_ < 0) throw ScorerError("cannot bind scorer server on " + options_.host);
  return port_;
}

int ScorerServer::start() {
  bind();
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void ScorerServer::run() {
  bind();
  impl_->server.listen_after_bind();
}

void ScorerServer::stop() {
  if (impl_) impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

std::string ScorerServer::endpoint() const {
  return "http://" + options_.host + ":" + std::to_string(port_);
}

}  // namespace tokmarg
