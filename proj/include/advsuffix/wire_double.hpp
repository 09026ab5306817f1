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

// Loopback HTTP server exposing in-process models over the wire protocol.
// Used by the adapter tests and by `advsuffix serve-mock`. Faults can be
// injected per route to exercise client-side validation.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <string>
#include <thread>

#include "advsuffix/models.hpp"
#include "advsuffix/remote.hpp"
#include "advsuffix/target_oracle.hpp"
#include "httplib.h"
#include "json.hpp"

namespace advsuffix::remote {

struct Faults {
  int delay_ms = 0;
  /// Answer this many requests with 503 before behaving.
  int fail_first = 0;
  /// Added to the first probability of every distribution.
  double prob_drift = 0.0;
  bool negative_prob = false;
  /// Extra entries appended to every embedding.
  std::size_t extra_dims = 0;
  /// Prompts containing this text get a 403; empty disables.
  std::string reject_substring;
  bool drop_flagged = false;
  /// Overrides the classifier score when finite.
  double score_override = std::nan("");
  /// Required bearer token; empty accepts anything.
  std::string bearer_token;
};

class LoopbackServer {
 public:
  LoopbackServer(const GeneratorModel* generator, const TargetModel* target,
                 const UnsafeClassifier* classifier, Faults faults = {})
      : generator_(generator), target_(target), classifier_(classifier),
        faults_(std::move(faults)) {
    server_.set_tcp_nodelay(true);
    install();
  }

  LoopbackServer(const LoopbackServer&) = delete;
  LoopbackServer& operator=(const LoopbackServer&) = delete;

  ~LoopbackServer() { stop(); }

  /// Binds to `port` (0 picks a free one) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) fail(ErrorCode::kIoFailure, "cannot bind " + host + ":" + std::to_string(port));
    host_ = host;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Blocks serving on the calling thread.
  void serve_forever(const std::string& host, int port) {
    host_ = host;
    port_ = port;
    if (!server_.listen(host, port)) fail(ErrorCode::kIoFailure, "cannot listen on " + host);
  }

  void stop() {
    if (server_.is_running()) server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string url() const { return "http://" + host_ + ":" + std::to_string(port_); }

  EndpointConfig endpoint() const {
    EndpointConfig cfg;
    cfg.base_url = url();
    return cfg;
  }

  int max_in_flight() const { return max_in_flight_.load(); }
  long requests() const { return requests_.load(); }

 private:
  using Handler = std::function<void(const nlohmann::json&, httplib::Response&)>;

  void install() {
    route(kRouteNextToken, [this](const nlohmann::json& req, httplib::Response& res) {
      if (!generator_) return not_found(res);
      auto probs = generator_->next_token(req.at("context").get<std::vector<TokenId>>()).probs;
      if (!probs.empty()) {
        probs[0] += faults_.prob_drift;
        if (faults_.negative_prob) probs[0] = -probs[0] - 1e-3;
      }
      reply(res, {{"probs", probs}});
    });
    route(kRouteGenerate, [this](const nlohmann::json& req, httplib::Response& res) {
      if (!target_) return not_found(res);
      const auto prompt = req.at("prompt").get<std::string>();
      if (!faults_.reject_substring.empty() &&
          prompt.find(faults_.reject_substring) != std::string::npos) {
        res.status = 403;
        res.set_content(R"({"error":"prompt refused"})", "application/json");
        return;
      }
      auto e = target_->generate(prompt, req.at("seed").get<std::uint64_t>());
      e.resize(e.size() + faults_.extra_dims, 0.0);
      reply(res, {{"embedding", e}});
    });
    route(kRouteClassify, [this](const nlohmann::json& req, httplib::Response& res) {
      if (!classifier_) return not_found(res);
      auto v = classifier_->classify(req.at("embedding").get<Embedding>());
      nlohmann::json out;
      out["score"] = std::isfinite(faults_.score_override) ? faults_.score_override : v.score;
      if (!faults_.drop_flagged) out["flagged"] = v.flagged;
      reply(res, out);
    });
    server_.Get(kRouteHealth, [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
  }

  void route(const char* path, Handler h) {
    server_.Post(path, [this, h](const httplib::Request& req, httplib::Response& res) {
      const int now = ++in_flight_;
      int prev = max_in_flight_.load();
      while (now > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
      }
      ++requests_;
      handle(req, res, h);
      --in_flight_;
    });
  }

  void handle(const httplib::Request& req, httplib::Response& res, const Handler& h) {
    if (faults_.delay_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(faults_.delay_ms));
    }
    if (!faults_.bearer_token.empty() &&
        req.get_header_value("Authorization") != "Bearer " + faults_.bearer_token) {
      res.status = 401;
      return;
    }
    if (fail_budget_.fetch_add(1) < faults_.fail_first) {
      res.status = 503;
      return;
    }
    try {
      h(nlohmann::json::parse(req.body), res);
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    } catch (const Error& e) {
      res.status = 500;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  }

  static void reply(httplib::Response& res, const nlohmann::json& body) {
    res.set_content(body.dump(), "application/json");
  }

  static void not_found(httplib::Response& res) { res.status = 404; }

  const GeneratorModel* generator_;
  const TargetModel* target_;
  const UnsafeClassifier* classifier_;
  Faults faults_;
  httplib::Server server_;
  std::thread thread_;
  std::string host_ = "127.0.0.1";
  int port_ = -1;
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
  std::atomic<long> requests_{0};
  std::atomic<int> fail_budget_{0};
};

}  // namespace advsuffix::remote
