// Copyright 2026 The advsuffix Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

/**
 * Remote backends
 *
 * JSON-over-HTTP adapters that put real language models, text-to-image
 * targets and safety classifiers behind the in-process interfaces. Field
 * names and status handling are specified in docs/wire_protocol.md.
 *
 * Each adapter owns a bounded pool of keep-alive connections; the pool size
 * is the in-flight cap, and callers beyond it block until a connection frees
 * up. Timeouts and 5xx responses are retried with linear backoff; refusals
 * (4xx on /v1/generate) are never retried.
 */

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "advsuffix/error.hpp"
#include "advsuffix/models.hpp"
#include "advsuffix/target_oracle.hpp"
#include "httplib.h"
#include "json.hpp"

namespace advsuffix::remote {

inline constexpr const char* kRouteNextToken = "/v1/next_token";
inline constexpr const char* kRouteGenerate = "/v1/generate";
inline constexpr const char* kRouteClassify = "/v1/classify";
inline constexpr const char* kRouteHealth = "/v1/health";

struct EndpointConfig {
  std::string base_url = "http://127.0.0.1:8080";
  /// Overrides for the default route paths, keyed by default path.
  std::map<std::string, std::string> routes;
  int timeout_ms = 10000;
  std::size_t max_in_flight = 4;
  int retries = 2;
  int backoff_ms = 50;
  /// Name of the environment variable holding a bearer token; empty for none.
  std::string auth_env;

  std::string route(const std::string& key) const {
    auto it = routes.find(key);
    return it == routes.end() ? key : it->second;
  }

  void validate() const {
    if (timeout_ms <= 0) fail(ErrorCode::kInvalidArgument, "timeout must be > 0");
    if (retries < 0) fail(ErrorCode::kInvalidArgument, "retries must be >= 0");
    if (max_in_flight < 1) fail(ErrorCode::kInvalidArgument, "max_in_flight must be >= 1");
  }
};

struct Response {
  int status = 0;
  nlohmann::json body;
};

/// Connection pool plus retry policy shared by the adapters.
class Client {
 public:
  explicit Client(EndpointConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (!cfg_.auth_env.empty()) {
      if (const char* tok = std::getenv(cfg_.auth_env.c_str())) token_ = tok;
    }
  }

  const EndpointConfig& config() const { return cfg_; }

  /// POSTs `body` to the route. Returns any response below 500; throws
  /// Timeout or BackendFailure once retries are exhausted.
  Response post(const std::string& route_key, const nlohmann::json& body) const {
    return call(route_key, &body);
  }

  Response get(const std::string& route_key) const { return call(route_key, nullptr); }

 private:
  class Lease {
   public:
    Lease(const Client& owner, std::unique_ptr<httplib::Client> c)
        : owner_(owner), client_(std::move(c)) {}
    ~Lease() { owner_.release(std::move(client_)); }
    httplib::Client& operator*() { return *client_; }

   private:
    const Client& owner_;
    std::unique_ptr<httplib::Client> client_;
  };

  std::unique_ptr<httplib::Client> acquire() const {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !idle_.empty() || created_ < cfg_.max_in_flight; });
    if (!idle_.empty()) {
      auto c = std::move(idle_.back());
      idle_.pop_back();
      return c;
    }
    ++created_;
    lock.unlock();
    auto c = std::make_unique<httplib::Client>(cfg_.base_url);
    const auto ms = std::chrono::milliseconds(cfg_.timeout_ms);
    c->set_connection_timeout(ms);
    c->set_read_timeout(ms);
    c->set_write_timeout(ms);
    c->set_keep_alive(true);
    c->set_tcp_nodelay(true);
    if (!token_.empty()) c->set_bearer_token_auth(token_);
    return c;
  }

  void release(std::unique_ptr<httplib::Client> c) const {
    {
      std::lock_guard lock(mu_);
      idle_.push_back(std::move(c));
    }
    cv_.notify_one();
  }

  Response call(const std::string& route_key, const nlohmann::json* body) const {
    const std::string path = cfg_.route(route_key);
    const std::string payload = body ? body->dump() : std::string();
    std::string last_error;
    bool timed_out = false;
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.backoff_ms * attempt));
      }
      httplib::Result res{nullptr, httplib::Error::Unknown};
      {
        Lease lease(*this, acquire());
        res = body ? (*lease).Post(path, payload, "application/json") : (*lease).Get(path);
      }
      if (!res) {
        const auto err = res.error();
        timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
        last_error = httplib::to_string(err);
        if (timed_out) continue;
        fail(ErrorCode::kBackendFailure, path + ": " + last_error);
      }
      if (res->status >= 500) {
        timed_out = false;
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      Response out;
      out.status = res->status;
      if (res->status < 400) {
        try {
          out.body = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
          fail(ErrorCode::kMalformedResponse, path + ": " + e.what());
        }
      }
      return out;
    }
    fail(timed_out ? ErrorCode::kTimeout : ErrorCode::kBackendFailure,
         path + ": " + last_error + " after " + std::to_string(cfg_.retries + 1) + " attempts");
  }

  EndpointConfig cfg_;
  std::string token_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  mutable std::vector<std::unique_ptr<httplib::Client>> idle_;
  mutable std::size_t created_ = 0;
};

inline std::vector<double> number_array(const nlohmann::json& body, const char* field,
                                        const std::string& route) {
  if (!body.is_object() || !body.contains(field) || !body[field].is_array()) {
    fail(ErrorCode::kMalformedResponse, route + ": missing array field '" + field + "'");
  }
  std::vector<double> out;
  out.reserve(body[field].size());
  for (const auto& x : body[field]) {
    if (!x.is_number()) fail(ErrorCode::kMalformedResponse, route + ": non-numeric entry");
    out.push_back(x.get<double>());
  }
  return out;
}

inline void expect_ok(const Response& r, const std::string& route) {
  if (r.status >= 400) {
    fail(ErrorCode::kBackendFailure, route + ": HTTP " + std::to_string(r.status));
  }
}

/// Checks and, for small drift, renormalizes a wire distribution.
inline NextTokenDistribution validate_distribution(std::vector<double> probs,
                                                   std::size_t vocab_size) {
  if (probs.size() != vocab_size) {
    fail(ErrorCode::kMalformedResponse, "distribution has " + std::to_string(probs.size()) +
                                            " entries, expected " + std::to_string(vocab_size));
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) {
      fail(ErrorCode::kDistributionInvalid, "negative or non-finite probability");
    }
    sum += p;
  }
  const double drift = std::abs(sum - 1.0);
  if (drift > 1e-6) {
    fail(ErrorCode::kDistributionInvalid, "probabilities sum to " + std::to_string(sum));
  }
  // Sums within rounding noise are passed through untouched.
  if (drift > 1e-12) {
    for (double& p : probs) p /= sum;
  }
  return NextTokenDistribution{std::move(probs)};
}

// ============================================================================
// Adapters
// ============================================================================

class RemoteGenerator final : public GeneratorModel {
 public:
  RemoteGenerator(EndpointConfig cfg, std::size_t vocab_size)
      : client_(std::make_shared<Client>(std::move(cfg))), vocab_size_(vocab_size) {}

  std::size_t vocab_size() const override { return vocab_size_; }

  NextTokenDistribution next_token(std::span<const TokenId> context) const override {
    nlohmann::json req;
    req["context"] = std::vector<TokenId>(context.begin(), context.end());
    const auto r = client_->post(kRouteNextToken, req);
    expect_ok(r, kRouteNextToken);
    return validate_distribution(number_array(r.body, "probs", kRouteNextToken), vocab_size_);
  }

  std::unique_ptr<GeneratorModel> clone() const override {
    return std::make_unique<RemoteGenerator>(*this);
  }

 private:
  std::shared_ptr<Client> client_;
  std::size_t vocab_size_;
};

class RemoteTarget final : public TargetModel {
 public:
  RemoteTarget(EndpointConfig cfg, std::size_t dimension)
      : client_(std::make_shared<Client>(std::move(cfg))), dimension_(dimension) {}

  std::size_t dimension() const override { return dimension_; }

  Embedding generate(std::string_view prompt, std::uint64_t seed) const override {
    nlohmann::json req;
    req["prompt"] = std::string(prompt);
    req["seed"] = seed;
    const auto r = client_->post(kRouteGenerate, req);
    if (r.status >= 400) {
      fail(ErrorCode::kPromptRejected, "HTTP " + std::to_string(r.status));
    }
    auto e = number_array(r.body, "embedding", kRouteGenerate);
    if (e.size() != dimension_) {
      fail(ErrorCode::kDimensionMismatch, "embedding has " + std::to_string(e.size()) +
                                              " entries, expected " + std::to_string(dimension_));
    }
    return e;
  }

  bool healthy() const {
    try {
      return client_->get(kRouteHealth).status == 200;
    } catch (const Error&) {
      return false;
    }
  }

 private:
  std::shared_ptr<Client> client_;
  std::size_t dimension_;
};

class RemoteClassifier final : public UnsafeClassifier {
 public:
  explicit RemoteClassifier(EndpointConfig cfg)
      : client_(std::make_shared<Client>(std::move(cfg))) {}

  ClassifierVerdict classify(const Embedding& e) const override {
    nlohmann::json req;
    req["embedding"] = e;
    const auto r = client_->post(kRouteClassify, req);
    expect_ok(r, kRouteClassify);
    const auto& b = r.body;
    if (!b.is_object() || !b.contains("score") || !b["score"].is_number() ||
        !b.contains("flagged") || !b["flagged"].is_boolean()) {
      fail(ErrorCode::kMalformedResponse, "classify response needs numeric 'score' and boolean 'flagged'");
    }
    ClassifierVerdict v;
    v.score = b["score"].get<double>();
    v.flagged = b["flagged"].get<bool>();
    if (v.score < 0.0 || v.score > 1.0) {
      std::lock_guard lock(*warn_mu_);
      ++*warnings_;
      std::cerr << "warning: classifier score " << v.score << " clamped to [0, 1]\n";
      v.score = std::clamp(v.score, 0.0, 1.0);
    }
    return v;
  }

  std::size_t warnings() const {
    std::lock_guard lock(*warn_mu_);
    return *warnings_;
  }

 private:
  std::shared_ptr<Client> client_;
  std::shared_ptr<std::mutex> warn_mu_ = std::make_shared<std::mutex>();
  std::shared_ptr<std::size_t> warnings_ = std::make_shared<std::size_t>(0);
};

}  // namespace advsuffix::remote
