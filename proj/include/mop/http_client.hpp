#pragma once

/**
 * OpenAI-compatible HTTP provider: POST {base_url}/completions and
 * {base_url}/embeddings with bearer auth from an environment variable.
 *
 * Transient failures (connect errors, 5xx, 429) are retried with exponential
 * backoff and jitter; RateLimited surfaces only after backoff gives up on
 * 429s, other exhausted retries surface as TransportError. Temperature-0
 * completions and all embeddings go through the shared CallCache; cache hits
 * do not charge the budget.
 */

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "mop/detail/rand.hpp"
#include "mop/errors.hpp"
#include "mop/providers.hpp"

namespace mop {

struct RetryPolicy {
  int max_attempts = 5;
  int initial_delay_ms = 250;
  double backoff_multiplier = 2.0;
  double jitter_fraction = 0.1;
};

struct HttpConfig {
  std::string base_url;  // e.g. "https://api.openai.com/v1"
  std::string api_key_env = "OPENAI_API_KEY";
  std::string completion_model = "gpt-3.5-turbo-instruct";
  std::string embedding_model = "text-embedding-ada-002";
  RetryPolicy retry;
  int timeout_sec = 60;
};

class HttpClient : public LlmClient {
 public:
  explicit HttpClient(HttpConfig config,
                      std::shared_ptr<ProviderBudget> budget = nullptr,
                      std::shared_ptr<CallCache> cache = nullptr)
      : config_(std::move(config)),
        budget_(budget ? std::move(budget) : std::make_shared<ProviderBudget>()),
        cache_(std::move(cache)),
        jitter_rng_(std::chrono::steady_clock::now().time_since_epoch().count()) {
    split_base_url(config_.base_url, origin_, path_prefix_);
    http_ = std::make_unique<httplib::Client>(origin_);
    http_->set_connection_timeout(config_.timeout_sec);
    http_->set_read_timeout(config_.timeout_sec);
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
      http_->set_bearer_token_auth(key);
  }

  std::string complete(const CompletionRequest& req) override {
    const bool cacheable = cache_ && req.temperature == 0.0;
    std::string key;
    if (cacheable) {
      key = completion_cache_key(config_.completion_model, req);
      if (auto hit = cache_->get(key)) return *hit;
    }
    budget_->charge_completion(req.temperature);

    nlohmann::json body{{"model", config_.completion_model},
                        {"prompt", req.prompt},
                        {"temperature", req.temperature},
                        {"max_tokens", req.max_output_tokens}};
    if (!req.stop_sequences.empty()) body["stop"] = req.stop_sequences;

    const nlohmann::json response = post_json("/completions", body);
    std::string text;
    try {
      text = response.at("choices").at(0).at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("unexpected completion response shape: ") + e.what());
    }
    if (cacheable) cache_->put(key, body, text);
    return text;
  }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    if (texts.empty()) throw ValidationError("embed requires at least one text");
    std::vector<EmbeddingVector> out(texts.size());
    std::vector<std::size_t> misses;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (cache_) {
        const std::string key = embedding_cache_key(config_.embedding_model, texts[i]);
        if (auto hit = cache_->get(key)) {
          out[i] = EmbeddingVector{nlohmann::json::parse(*hit).get<std::vector<double>>(),
                                   config_.embedding_model};
          continue;
        }
      }
      misses.push_back(i);
    }
    if (misses.empty()) return out;

    budget_->charge_embeddings(misses.size());
    nlohmann::json inputs = nlohmann::json::array();
    for (std::size_t i : misses) inputs.push_back(texts[i]);
    const nlohmann::json response =
        post_json("/embeddings", {{"model", config_.embedding_model}, {"input", inputs}});
    try {
      const auto& data = response.at("data");
      if (data.size() != misses.size())
        throw TransportError("embedding response count mismatch");
      for (const auto& item : data) {
        const std::size_t slot = misses.at(item.at("index").get<std::size_t>());
        out[slot] = EmbeddingVector{item.at("embedding").get<std::vector<double>>(),
                                    config_.embedding_model};
        if (cache_)
          cache_->put(embedding_cache_key(config_.embedding_model, texts[slot]),
                      nlohmann::json{{"text", texts[slot]}},
                      nlohmann::json(out[slot].values).dump());
      }
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("unexpected embedding response shape: ") + e.what());
    }
    for (const auto& v : out) {
      if (v.values.empty()) throw TransportError("embedding response left an input unfilled");
      for (double x : v.values)
        if (!std::isfinite(x)) throw TransportError("embedding response contains non-finite values");
    }
    return out;
  }

  std::string completion_model_id() const override { return config_.completion_model; }
  std::string embedding_model_id() const override { return config_.embedding_model; }
  CacheStats cache_stats() const override { return cache_ ? cache_->stats() : CacheStats{}; }
  ProviderBudget& budget() override { return *budget_; }

 private:
  static void split_base_url(const std::string& url, std::string& origin, std::string& prefix) {
    const std::size_t scheme = url.find("://");
    if (scheme == std::string::npos) throw ValidationError("base_url must include a scheme");
    const std::size_t path = url.find('/', scheme + 3);
    if (path == std::string::npos) {
      origin = url;
      prefix.clear();
    } else {
      origin = url.substr(0, path);
      prefix = url.substr(path);
      while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    }
  }

  nlohmann::json post_json(const std::string& endpoint, const nlohmann::json& body) {
    const std::string path = path_prefix_ + endpoint;
    const std::string payload = body.dump();
    bool rate_limited = false;
    std::string last_error;
    for (int attempt = 0; attempt < config_.retry.max_attempts; ++attempt) {
      if (attempt > 0) backoff(attempt);
      httplib::Result res;
      {
        std::lock_guard<std::mutex> lock(http_mu_);
        res = http_->Post(path, payload, "application/json");
      }
      if (!res) {
        last_error = "connection failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429) {
        rate_limited = true;
        last_error = "HTTP 429";
        continue;
      }
      if (res->status >= 500) {
        rate_limited = false;
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw TransportError("HTTP " + std::to_string(res->status) + " from " + path + ": " +
                             res->body);
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("response is not valid JSON: ") + e.what());
      }
    }
    if (rate_limited)
      throw RateLimited("rate limited after " + std::to_string(config_.retry.max_attempts) +
                        " attempts");
    throw TransportError("request to " + path + " failed after " +
                         std::to_string(config_.retry.max_attempts) +
                         " attempts: " + last_error);
  }

  void backoff(int attempt) {
    double delay = config_.retry.initial_delay_ms;
    for (int i = 1; i < attempt; ++i) delay *= config_.retry.backoff_multiplier;
    double jitter;
    {
      std::lock_guard<std::mutex> lock(http_mu_);
      jitter = 1.0 + config_.retry.jitter_fraction * (2.0 * jitter_rng_.next_double() - 1.0);
    }
    std::this_thread::sleep_for(
        std::chrono::milliseconds(static_cast<std::int64_t>(delay * jitter)));
  }

  HttpConfig config_;
  std::shared_ptr<ProviderBudget> budget_;
  std::shared_ptr<CallCache> cache_;
  std::string origin_;
  std::string path_prefix_;
  std::unique_ptr<httplib::Client> http_;
  std::mutex http_mu_;  // httplib::Client is not safe for concurrent requests
  detail::Rng jitter_rng_;
};

}  // namespace mop
