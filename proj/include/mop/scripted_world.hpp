#pragma once

/**
 * Deterministic scripted provider for offline runs and oracle tests.
 *
 * A ScriptedWorld holds an embedding table, an instruction pool served
 * round-robin to generation calls (temperature > 0), and a pure answer rule
 * applied to evaluation calls (temperature 0). The answer rule sees the
 * prompt parsed back into (instruction, demos, query), which works because
 * evaluation prompts are rendered from the canonical templates with
 * single-line scripted texts.
 *
 * Worlds are constructed in code (arbitrary answer rules) or loaded from a
 * JSON file (substring rule table) for CLI mock runs.
 */

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mop/core.hpp"
#include "mop/errors.hpp"
#include "mop/providers.hpp"

namespace mop {

/// An evaluation prompt parsed back into its logical parts.
struct ParsedPrompt {
  std::string instruction;
  std::vector<std::pair<std::string, std::string>> demos;
  std::string query;
};

namespace detail {

/// If `line` starts with `prefix`, returns the remainder minus one optional
/// following space.
inline std::optional<std::string> after_prefix(const std::string& line, std::string_view prefix) {
  if (line.rfind(prefix, 0) != 0) return std::nullopt;
  std::size_t pos = prefix.size();
  if (pos < line.size() && line[pos] == ' ') ++pos;
  return line.substr(pos);
}

}  // namespace detail

/// Recovers (instruction, demos, query) from a prompt rendered with the
/// default templates. Assumes single-line instruction, inputs and non-empty
/// single-line outputs; the trailing "Output:" with no value marks the query.
inline ParsedPrompt parse_eval_prompt(const std::string& prompt) {
  ParsedPrompt parsed;
  std::string pending_input;
  bool has_pending = false;
  std::size_t start = 0;
  while (start <= prompt.size()) {
    std::size_t end = prompt.find('\n', start);
    if (end == std::string::npos) end = prompt.size();
    const std::string line = prompt.substr(start, end - start);
    start = end + 1;
    if (auto v = detail::after_prefix(line, "Instruction:")) {
      parsed.instruction = *v;
    } else if (auto in = detail::after_prefix(line, "Input:")) {
      pending_input = *in;
      has_pending = true;
    } else if (auto out = detail::after_prefix(line, "Output:"); out && has_pending) {
      if (out->empty()) {
        parsed.query = pending_input;
      } else {
        parsed.demos.emplace_back(pending_input, *out);
      }
      has_pending = false;
    }
  }
  if (parsed.query.empty() && has_pending) parsed.query = pending_input;
  return parsed;
}

struct ScriptedWorld {
  std::string completion_model_id = "scripted-llm";
  std::string embedding_model_id = "scripted-embed";

  /// Every demo / query text appearing in an experiment needs an entry.
  std::map<std::string, std::vector<double>> embedding_table;

  /// Generation calls cycle through this pool in order.
  std::vector<std::string> instruction_pool;

  /// Pure rule answering evaluation calls.
  std::function<std::string(const ParsedPrompt&)> answer;

  /// Substring rule engine used by JSON-defined worlds:
  /// rules are evaluated in order, first full match wins.
  struct Rule {
    std::optional<std::string> instruction_contains;
    std::optional<bool> instruction_empty;
    std::optional<std::vector<std::string>> query_in;
    std::optional<std::vector<std::string>> demos_contain_any;
    std::map<std::string, std::string> answer_map;  // by query; empty -> fixed answer
    std::string answer;
  };

  static ScriptedWorld from_json(const json& j) {
    ScriptedWorld world;
    if (j.contains("completion_model_id"))
      world.completion_model_id = j.at("completion_model_id").get<std::string>();
    if (j.contains("embedding_model_id"))
      world.embedding_model_id = j.at("embedding_model_id").get<std::string>();
    if (j.contains("embeddings"))
      for (const auto& [text, vec] : j.at("embeddings").items())
        world.embedding_table[text] = vec.get<std::vector<double>>();
    if (j.contains("instruction_pool"))
      world.instruction_pool = j.at("instruction_pool").get<std::vector<std::string>>();

    std::vector<Rule> rules;
    if (j.contains("rules")) {
      for (const auto& rj : j.at("rules")) {
        Rule r;
        if (rj.contains("instruction_contains"))
          r.instruction_contains = rj.at("instruction_contains").get<std::string>();
        if (rj.contains("instruction_empty"))
          r.instruction_empty = rj.at("instruction_empty").get<bool>();
        if (rj.contains("query_in"))
          r.query_in = rj.at("query_in").get<std::vector<std::string>>();
        if (rj.contains("demos_contain_any"))
          r.demos_contain_any = rj.at("demos_contain_any").get<std::vector<std::string>>();
        if (rj.contains("answer_map"))
          for (const auto& [q, a] : rj.at("answer_map").items())
            r.answer_map[q] = a.get<std::string>();
        if (rj.contains("answer")) r.answer = rj.at("answer").get<std::string>();
        rules.push_back(std::move(r));
      }
    }
    std::string default_answer =
        j.contains("default_answer") ? j.at("default_answer").get<std::string>() : "";
    world.answer = [rules = std::move(rules), default_answer](const ParsedPrompt& p) {
      for (const auto& r : rules) {
        if (r.instruction_contains &&
            p.instruction.find(*r.instruction_contains) == std::string::npos)
          continue;
        if (r.instruction_empty && *r.instruction_empty != p.instruction.empty()) continue;
        if (r.query_in) {
          bool found = false;
          for (const auto& q : *r.query_in)
            if (q == p.query) { found = true; break; }
          if (!found) continue;
        }
        if (r.demos_contain_any) {
          bool found = false;
          for (const auto& d : p.demos)
            for (const auto& want : *r.demos_contain_any)
              if (d.first == want) { found = true; break; }
          if (!found) continue;
        }
        if (!r.answer_map.empty()) {
          auto it = r.answer_map.find(p.query);
          if (it != r.answer_map.end()) return it->second;
          continue;
        }
        return r.answer;
      }
      return default_answer;
    };
    return world;
  }

  static ScriptedWorld load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open world file: " + path.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ParseError(std::string("world file is not valid JSON: ") + e.what());
    }
    return from_json(j);
  }
};

/// Deterministic provider over a ScriptedWorld. Evaluation output is a pure
/// function of the request; generation output additionally advances the
/// round-robin pool cursor.
class MockClient : public LlmClient {
 public:
  explicit MockClient(ScriptedWorld world,
                      std::shared_ptr<ProviderBudget> budget = nullptr,
                      std::shared_ptr<CallCache> cache = nullptr)
      : world_(std::move(world)),
        budget_(budget ? std::move(budget) : std::make_shared<ProviderBudget>()),
        cache_(std::move(cache)) {}

  std::string complete(const CompletionRequest& req) override {
    const bool cacheable = cache_ && req.temperature == 0.0;
    std::string key;
    if (cacheable) {
      key = completion_cache_key(world_.completion_model_id, req);
      if (auto hit = cache_->get(key)) return *hit;
    }
    budget_->charge_completion(req.temperature);
    std::string response;
    if (req.temperature > 0.0) {
      if (world_.instruction_pool.empty())
        throw MissingScriptEntry("scripted world has an empty instruction pool");
      const std::size_t i = generation_cursor_.fetch_add(1);
      response = world_.instruction_pool[i % world_.instruction_pool.size()];
    } else {
      if (!world_.answer) throw MissingScriptEntry("scripted world has no answer rule");
      response = world_.answer(parse_eval_prompt(req.prompt));
    }
    if (cacheable) {
      cache_->put(key,
                  nlohmann::json{{"prompt", req.prompt}, {"temperature", req.temperature}},
                  response);
    }
    return response;
  }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    std::vector<EmbeddingVector> out(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
      std::string key;
      if (cache_) {
        key = embedding_cache_key(world_.embedding_model_id, texts[i]);
        if (auto hit = cache_->get(key)) {
          out[i] = EmbeddingVector{nlohmann::json::parse(*hit).get<std::vector<double>>(),
                                   world_.embedding_model_id};
          continue;
        }
      }
      auto it = world_.embedding_table.find(texts[i]);
      if (it == world_.embedding_table.end())
        throw MissingScriptEntry("no scripted embedding for text: " + texts[i]);
      for (double x : it->second)
        if (!std::isfinite(x))
          throw ValidationError("scripted embedding for '" + texts[i] + "' is not finite");
      budget_->charge_embeddings(1);
      out[i] = EmbeddingVector{it->second, world_.embedding_model_id};
      if (cache_) cache_->put(key, nlohmann::json{{"text", texts[i]}}, nlohmann::json(it->second).dump());
    }
    return out;
  }

  std::string completion_model_id() const override { return world_.completion_model_id; }
  std::string embedding_model_id() const override { return world_.embedding_model_id; }

  CacheStats cache_stats() const override { return cache_ ? cache_->stats() : CacheStats{}; }
  ProviderBudget& budget() override { return *budget_; }

  const ScriptedWorld& world() const { return world_; }

 private:
  ScriptedWorld world_;
  std::shared_ptr<ProviderBudget> budget_;
  std::shared_ptr<CallCache> cache_;
  std::atomic<std::size_t> generation_cursor_{0};
};

}  // namespace mop
