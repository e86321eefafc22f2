#pragma once

/**
 * Pluggable LLM completion and text-embedding backends.
 *
 * All providers implement LlmClient and share:
 *  - ProviderBudget: thread-safe call accounting that enforces the fixed
 *    search budget. Generation calls (temperature > 0) and evaluation calls
 *    (temperature == 0) are counted separately so budget parity across
 *    methods can be asserted.
 *  - CallCache: content-addressed response cache, one JSON record per entry
 *    on disk. Completions are cached only at temperature 0; sampled
 *    generation calls are intentionally uncached. Embeddings always cache.
 *    Cache hits never charge the budget.
 */

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mop/detail/digest.hpp"
#include "mop/errors.hpp"

namespace mop {

struct CompletionRequest {
  std::string prompt;
  double temperature = 0.0;
  int max_output_tokens = 256;
  std::vector<std::string> stop_sequences;
};

inline constexpr double kGenerationTemperature = 0.9;
inline constexpr double kEvaluationTemperature = 0.0;

struct EmbeddingVector {
  std::vector<double> values;
  std::string model_id;

  bool operator==(const EmbeddingVector&) const = default;
  std::size_t dim() const { return values.size(); }
};

// ============================================================================
// Budget accounting
// ============================================================================

class ProviderBudget {
 public:
  static constexpr std::int64_t kUnlimited = std::numeric_limits<std::int64_t>::max();

  ProviderBudget() = default;
  ProviderBudget(std::int64_t max_completions, std::int64_t max_embeddings)
      : max_completions_(max_completions), max_embeddings_(max_embeddings) {}

  /// Charges one completion; throws BudgetExhausted before exceeding the cap.
  void charge_completion(double temperature) {
    std::lock_guard<std::mutex> lock(mu_);
    if (used_completions_ >= max_completions_)
      throw BudgetExhausted("completion budget exhausted (" +
                            std::to_string(max_completions_) + ")");
    ++used_completions_;
    if (temperature > 0.0)
      ++generation_completions_;
    else
      ++evaluation_completions_;
  }

  void charge_embeddings(std::size_t count) {
    std::lock_guard<std::mutex> lock(mu_);
    if (used_embeddings_ + static_cast<std::int64_t>(count) > max_embeddings_)
      throw BudgetExhausted("embedding budget exhausted (" + std::to_string(max_embeddings_) +
                            ")");
    used_embeddings_ += static_cast<std::int64_t>(count);
  }

  std::int64_t used_completions() const {
    std::lock_guard<std::mutex> lock(mu_);
    return used_completions_;
  }
  std::int64_t used_embeddings() const {
    std::lock_guard<std::mutex> lock(mu_);
    return used_embeddings_;
  }
  /// Completions issued at temperature > 0 (instruction generation).
  std::int64_t generation_completions() const {
    std::lock_guard<std::mutex> lock(mu_);
    return generation_completions_;
  }
  /// Completions issued at temperature 0 (validation / test evaluation).
  std::int64_t evaluation_completions() const {
    std::lock_guard<std::mutex> lock(mu_);
    return evaluation_completions_;
  }
  std::int64_t max_completions() const { return max_completions_; }
  std::int64_t max_embeddings() const { return max_embeddings_; }

 private:
  mutable std::mutex mu_;
  std::int64_t max_completions_ = kUnlimited;
  std::int64_t max_embeddings_ = kUnlimited;
  std::int64_t used_completions_ = 0;
  std::int64_t used_embeddings_ = 0;
  std::int64_t generation_completions_ = 0;
  std::int64_t evaluation_completions_ = 0;
};

// ============================================================================
// Response cache
// ============================================================================

struct CacheStats {
  std::int64_t hits = 0;
  std::int64_t misses = 0;
  std::int64_t bytes_on_disk = 0;
};

inline std::string completion_cache_key(const std::string& model_id,
                                        const CompletionRequest& req) {
  nlohmann::json j{{"model", model_id},
                   {"temperature", req.temperature},
                   {"prompt", req.prompt},
                   {"max_output_tokens", req.max_output_tokens},
                   {"stop_sequences", req.stop_sequences}};
  return detail::sha256_hex(j.dump());
}

inline std::string embedding_cache_key(const std::string& model_id, const std::string& text) {
  nlohmann::json j{{"model", model_id}, {"kind", "embedding"}, {"text", text}};
  return detail::sha256_hex(j.dump());
}

/// Content-addressed cache. With an empty directory path it is memory-only;
/// otherwise every entry persists as <dir>/<key>.json and survives restarts.
class CallCache {
 public:
  CallCache() = default;
  explicit CallCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  std::optional<std::string> get(const std::string& key) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = memory_.find(key);
    if (it != memory_.end()) {
      ++hits_;
      return it->second;
    }
    if (!dir_.empty()) {
      const auto path = entry_path(key);
      std::ifstream in(path, std::ios::binary);
      if (in) {
        try {
          nlohmann::json record;
          in >> record;
          std::string response = record.at("response").get<std::string>();
          memory_[key] = response;
          ++hits_;
          return response;
        } catch (const nlohmann::json::exception&) {
          // unreadable entry behaves like a miss
        }
      }
    }
    ++misses_;
    return std::nullopt;
  }

  void put(const std::string& key, const nlohmann::json& request, const std::string& response) {
    std::lock_guard<std::mutex> lock(mu_);
    memory_[key] = response;
    if (dir_.empty()) return;
    nlohmann::json record{{"request_hash", key},
                          {"request", request},
                          {"response", response},
                          {"timestamp", now_iso8601()}};
    std::ofstream out(entry_path(key), std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write cache entry: " + entry_path(key).string());
    out << record.dump(2) << "\n";
  }

  CacheStats stats() const {
    std::lock_guard<std::mutex> lock(mu_);
    CacheStats s{hits_, misses_, 0};
    if (!dir_.empty() && std::filesystem::exists(dir_)) {
      for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
        if (entry.is_regular_file())
          s.bytes_on_disk += static_cast<std::int64_t>(entry.file_size());
      }
    }
    return s;
  }

  void clear() {
    std::lock_guard<std::mutex> lock(mu_);
    memory_.clear();
    if (!dir_.empty() && std::filesystem::exists(dir_)) {
      for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json")
          std::filesystem::remove(entry.path());
      }
    }
  }

 private:
  std::filesystem::path entry_path(const std::string& key) const { return dir_ / (key + ".json"); }

  static std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  mutable std::mutex mu_;
  std::filesystem::path dir_;
  std::map<std::string, std::string> memory_;
  std::int64_t hits_ = 0;
  std::int64_t misses_ = 0;
};

// ============================================================================
// Client interface
// ============================================================================

class LlmClient {
 public:
  virtual ~LlmClient() = default;

  /// Returns the completion text. Thread-safe.
  virtual std::string complete(const CompletionRequest& req) = 0;

  /// One vector per input text, order-preserving. Thread-safe.
  virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;

  virtual std::string completion_model_id() const = 0;
  virtual std::string embedding_model_id() const = 0;

  virtual CacheStats cache_stats() const { return {}; }
  virtual ProviderBudget& budget() = 0;
};

}  // namespace mop
