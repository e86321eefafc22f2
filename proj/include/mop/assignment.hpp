#pragma once

/**
 * Instruction assignment.
 *
 * Candidate instructions are induced from a demo subset (APE-style: render
 * the generation template, sample the model at temperature 0.9) and ranked by
 * mean task score at temperature 0. Region-Based Joint Search builds one
 * expert per demo cluster: candidates for expert c are generated from the
 * demos of the *other* clusters and scored with expert c's demos on the
 * validation items routed to c. The ablation variants keep everything fixed
 * except the single design axis they probe.
 *
 * Budget contract: a search issues exactly `total_budget` generation calls,
 * split floor(total_budget / C) per expert with the remainder going to the
 * lowest-indexed experts.
 */

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mop/core.hpp"
#include "mop/detail/digest.hpp"
#include "mop/detail/parallel.hpp"
#include "mop/detail/rand.hpp"
#include "mop/errors.hpp"
#include "mop/providers.hpp"
#include "mop/scoring.hpp"

namespace mop {

// ============================================================================
// Artifact types
// ============================================================================

struct InstructionCandidate {
  std::string text;
  std::vector<std::string> source_demo_ids;  // demos shown in the generation prompt
  int generation_index = 0;                  // index of the completion call that produced it
};

struct ScoredCandidate {
  InstructionCandidate candidate;
  double score = 0.0;
};

struct Expert {
  int index = 0;
  EmbeddingVector centroid;
  std::vector<Demo> demos;
  std::string instruction;
  double local_val_score = 0.0;
  std::vector<ScoredCandidate> candidates_evaluated;
};

/// The deployable product: a serialized set of experts plus the identity of
/// the embedding space they were built in.
struct MixtureArtifact {
  std::vector<Expert> experts;
  std::string embedding_model_id;
  std::string task_name;
  std::string build_config_digest;
  std::uint64_t seed = 0;
  bool normalized_embeddings = false;  // cosine-mode: unit-normalize before distances
  std::vector<int> fallback_full_validation;  // experts scored on the full validation set
  std::vector<std::string> discarded_demo_ids;

  int expert_count() const { return static_cast<int>(experts.size()); }

  /// Structural invariants: contiguous indices, non-empty demo sets, pairwise
  /// distinct centroids, and the chosen instruction attains the recorded
  /// maximum score.
  void validate() const {
    for (std::size_t c = 0; c < experts.size(); ++c) {
      const Expert& e = experts[c];
      if (e.index != static_cast<int>(c))
        throw ValidationError("expert indices must be contiguous from 0");
      if (e.demos.empty())
        throw ValidationError("expert " + std::to_string(c) + " has no demos");
      double best = 0.0;
      bool attained = false;
      for (const auto& sc : e.candidates_evaluated) best = std::max(best, sc.score);
      for (const auto& sc : e.candidates_evaluated)
        if (sc.candidate.text == e.instruction && sc.score == best) attained = true;
      if (!attained || e.local_val_score != best)
        throw ValidationError("expert " + std::to_string(c) +
                              " instruction does not attain the maximal candidate score");
      for (std::size_t other = c + 1; other < experts.size(); ++other)
        if (e.centroid.values == experts[other].centroid.values)
          throw ValidationError("experts " + std::to_string(c) + " and " +
                                std::to_string(other) + " share a centroid");
    }
  }

  std::vector<EmbeddingVector> centroids() const {
    std::vector<EmbeddingVector> out;
    out.reserve(experts.size());
    for (const auto& e : experts) out.push_back(e.centroid);
    return out;
  }

  json to_json() const {
    json experts_json = json::array();
    for (const auto& e : experts) {
      json demos = json::array();
      for (const auto& d : e.demos)
        demos.push_back(json{{"id", d.id}, {"input", d.input}, {"outputs", d.outputs}});
      json candidates = json::array();
      for (const auto& sc : e.candidates_evaluated)
        candidates.push_back(json{{"text", sc.candidate.text},
                                  {"source_demo_ids", sc.candidate.source_demo_ids},
                                  {"generation_index", sc.candidate.generation_index},
                                  {"score", sc.score}});
      experts_json.push_back(json{{"index", e.index},
                                  {"centroid", e.centroid.values},
                                  {"demos", demos},
                                  {"instruction", e.instruction},
                                  {"local_val_score", e.local_val_score},
                                  {"candidates", candidates}});
    }
    return json{{"task_name", task_name},
                {"embedding_model_id", embedding_model_id},
                {"seed", seed},
                {"build_config_digest", build_config_digest},
                {"normalized_embeddings", normalized_embeddings},
                {"experts", experts_json},
                {"fallback_full_validation", fallback_full_validation},
                {"discarded_demo_ids", discarded_demo_ids}};
  }

  static MixtureArtifact from_json(const json& j) {
    MixtureArtifact a;
    try {
      a.task_name = j.at("task_name").get<std::string>();
      a.embedding_model_id = j.at("embedding_model_id").get<std::string>();
      a.seed = j.at("seed").get<std::uint64_t>();
      a.build_config_digest = j.at("build_config_digest").get<std::string>();
      if (j.contains("normalized_embeddings"))
        a.normalized_embeddings = j.at("normalized_embeddings").get<bool>();
      a.fallback_full_validation = j.at("fallback_full_validation").get<std::vector<int>>();
      a.discarded_demo_ids = j.at("discarded_demo_ids").get<std::vector<std::string>>();
      for (const auto& ej : j.at("experts")) {
        Expert e;
        e.index = ej.at("index").get<int>();
        e.centroid = EmbeddingVector{ej.at("centroid").get<std::vector<double>>(),
                                     a.embedding_model_id};
        for (const auto& dj : ej.at("demos"))
          e.demos.push_back(Demo{dj.at("id").get<std::string>(),
                                 dj.at("input").get<std::string>(),
                                 dj.at("outputs").get<std::vector<std::string>>()});
        e.instruction = ej.at("instruction").get<std::string>();
        e.local_val_score = ej.at("local_val_score").get<double>();
        for (const auto& cj : ej.at("candidates"))
          e.candidates_evaluated.push_back(
              ScoredCandidate{InstructionCandidate{
                                  cj.at("text").get<std::string>(),
                                  cj.at("source_demo_ids").get<std::vector<std::string>>(),
                                  cj.at("generation_index").get<int>()},
                              cj.at("score").get<double>()});
        a.experts.push_back(std::move(e));
      }
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed artifact: ") + e.what());
    }
    return a;
  }

  std::string digest() const { return detail::sha256_hex(to_json().dump()); }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write artifact: " + path.string());
    out << to_json().dump(2) << "\n";
  }

  static MixtureArtifact load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open artifact: " + path.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ParseError(std::string("artifact is not valid JSON: ") + e.what());
    }
    return from_json(j);
  }
};

// ============================================================================
// Candidate generation and scoring
// ============================================================================

/// Samples r demos from the pool (seeded, without replacement), renders the
/// generation template once, and issues m completions at temperature 0.9.
/// Results are trimmed and deduplicated preserving first occurrence, so at
/// most m candidates come back. Throws EmptyGeneration if every completion is
/// blank after trimming.
inline std::vector<InstructionCandidate> generate_candidates(
    LlmClient& llm, const std::vector<Demo>& demo_pool, std::size_t r, int m, std::uint64_t seed,
    const TemplateSet& templates, double temperature = kGenerationTemperature) {
  if (demo_pool.empty()) throw ValidationError("generate_candidates needs a non-empty demo pool");
  if (r > demo_pool.size())
    throw ValidationError("generation subset size exceeds the demo pool");
  if (m < 1) throw ValidationError("candidate count must be positive");

  detail::Rng rng(seed);
  std::vector<Demo> subset;
  std::vector<std::string> source_ids;
  for (std::size_t idx : rng.sample_without_replacement(demo_pool.size(), r)) {
    subset.push_back(demo_pool[idx]);
    source_ids.push_back(demo_pool[idx].id);
  }

  const std::string prompt = render_generation_prompt(templates, subset);
  CompletionRequest req{prompt, temperature, 256, {}};

  std::vector<InstructionCandidate> candidates;
  std::map<std::string, bool> seen;
  for (int i = 0; i < m; ++i) {
    std::string text = llm.complete(req);
    // trim surrounding whitespace and stray quotes
    auto is_trim = [](char c) {
      return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '"';
    };
    std::size_t b = 0, e = text.size();
    while (b < e && is_trim(text[b])) ++b;
    while (e > b && is_trim(text[e - 1])) --e;
    text = text.substr(b, e - b);
    if (text.empty() || seen.count(text)) continue;
    seen[text] = true;
    candidates.push_back(InstructionCandidate{std::move(text), source_ids, i});
  }
  if (candidates.empty())
    throw EmptyGeneration("all " + std::to_string(m) + " completions were blank");
  return candidates;
}

/// Mean task score of [instruction, demos, x] prompts over an evaluation set,
/// completed at temperature 0. Item evaluations are independent provider
/// calls and may fan out over `parallelism` workers.
inline double score_instruction(LlmClient& llm, const std::string& instruction,
                                const std::vector<Demo>& demos, const std::vector<Demo>& eval_set,
                                Metric metric, const TemplateSet& templates,
                                int parallelism = 1) {
  if (eval_set.empty()) throw ValidationError("score_instruction needs a non-empty eval set");
  std::vector<std::string> predictions(eval_set.size());
  detail::parallel_for(eval_set.size(), parallelism, [&](std::size_t i) {
    const std::string prompt = assemble_prompt(templates, instruction, demos, eval_set[i].input);
    predictions[i] = llm.complete(CompletionRequest{prompt, kEvaluationTemperature, 256, {}});
  });
  return score_batch(predictions, eval_set, metric).mean;
}

// ============================================================================
// Region-Based Joint Search and ablation variants
// ============================================================================

struct SearchConfig {
  int total_budget = 20;             // generation completions across all experts
  std::size_t generation_demo_count = 5;  // r: demos shown in a generation prompt
  std::uint64_t seed = 0;
  Metric metric = Metric::ExactMatch;
  TemplateSet templates = TemplateSet::defaults();
  int parallelism = 1;
  std::string task_name;
  std::string config_digest;
};

enum class AssignVariant { Rbjs, IndependentSearch, JointSearch, RbjsSameCluster };

inline std::string to_string(AssignVariant v) {
  switch (v) {
    case AssignVariant::Rbjs: return "rbjs";
    case AssignVariant::IndependentSearch: return "independent_search";
    case AssignVariant::JointSearch: return "joint_search";
    case AssignVariant::RbjsSameCluster: return "rbjs_same_cluster";
  }
  return "rbjs";
}

namespace detail {

/// floor(total / C) per expert, remainder to the lowest indices.
inline std::vector<int> split_budget(int total, int c_count) {
  std::vector<int> out(c_count, total / c_count);
  for (int c = 0; c < total % c_count; ++c) ++out[c];
  return out;
}

/// Highest-scoring candidate; ties go to the lowest generation index (the
/// list is already in generation order).
inline std::size_t argmax_candidate(const std::vector<ScoredCandidate>& scored) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scored.size(); ++i)
    if (scored[i].score > scored[best].score) best = i;
  return best;
}

}  // namespace detail

/// Region-Based Joint Search (the default) and its §-by-§ ablation variants:
///  - Rbjs: candidates for expert c come from the other clusters' demos and
///    are scored with cluster c's demos on the validation items routed to c.
///  - IndependentSearch: one global demo-free instruction, chosen on the full
///    validation set, copied to every expert.
///  - JointSearch: like Rbjs but scored on a seeded random validation subset
///    of the same size as the routed subset.
///  - RbjsSameCluster: like Rbjs but candidates come from the expert's own
///    cluster.
/// Experts whose routed validation subset is empty fall back to the full
/// validation set and are flagged in the artifact.
inline MixtureArtifact assign_instructions(AssignVariant variant, LlmClient& llm,
                                           const std::vector<std::vector<Demo>>& clusters,
                                           const std::vector<std::vector<Demo>>& routed_val,
                                           const std::vector<EmbeddingVector>& centroids,
                                           const SearchConfig& cfg) {
  const int c_count = static_cast<int>(clusters.size());
  if (c_count < 1) throw ValidationError("at least one cluster is required");
  if (routed_val.size() != clusters.size() || centroids.size() != clusters.size())
    throw ValidationError("clusters, routed_val and centroids must have equal length");
  if (cfg.total_budget < c_count)
    throw ValidationError("total budget must be at least the number of experts");

  std::vector<Demo> full_validation;
  for (const auto& bucket : routed_val)
    full_validation.insert(full_validation.end(), bucket.begin(), bucket.end());
  if (full_validation.empty()) throw ValidationError("validation set is empty");

  MixtureArtifact artifact;
  artifact.embedding_model_id = llm.embedding_model_id();
  artifact.task_name = cfg.task_name;
  artifact.build_config_digest = cfg.config_digest;
  artifact.seed = cfg.seed;

  // ---- IndependentSearch: one global search, demo-free scoring ----
  if (variant == AssignVariant::IndependentSearch) {
    std::vector<Demo> all_train;
    for (const auto& cl : clusters) all_train.insert(all_train.end(), cl.begin(), cl.end());
    const std::size_t r = std::min(cfg.generation_demo_count, all_train.size());
    auto candidates = generate_candidates(llm, all_train, r, cfg.total_budget,
                                          detail::mix_seed(cfg.seed, 0), cfg.templates);
    std::vector<ScoredCandidate> scored(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const double s = score_instruction(llm, candidates[i].text, {}, full_validation,
                                         cfg.metric, cfg.templates, cfg.parallelism);
      scored[i] = ScoredCandidate{candidates[i], s};
    }
    const std::size_t best = detail::argmax_candidate(scored);
    for (int c = 0; c < c_count; ++c) {
      Expert e;
      e.index = c;
      e.centroid = centroids[c];
      e.demos = clusters[c];
      e.instruction = scored[best].candidate.text;
      e.local_val_score = scored[best].score;
      e.candidates_evaluated = scored;
      artifact.experts.push_back(std::move(e));
    }
    artifact.validate();
    return artifact;
  }

  // ---- Region-based variants: per-expert pools and evaluation subsets ----
  const auto budgets = detail::split_budget(cfg.total_budget, c_count);

  // All sampling is seeded and performed up front; the expensive evaluation
  // calls can then fan out without affecting results.
  std::vector<std::vector<Demo>> pools(c_count);
  std::vector<std::vector<Demo>> eval_sets(c_count);
  for (int c = 0; c < c_count; ++c) {
    if (variant == AssignVariant::RbjsSameCluster || c_count == 1) {
      pools[c] = clusters[c];
    } else {
      for (int other = 0; other < c_count; ++other)
        if (other != c)
          pools[c].insert(pools[c].end(), clusters[other].begin(), clusters[other].end());
    }
    if (variant == AssignVariant::JointSearch) {
      // same size as the routed subset, drawn from the full validation set
      const std::size_t want = routed_val[c].size();
      if (want == 0) {
        artifact.fallback_full_validation.push_back(c);
        eval_sets[c] = full_validation;
      } else {
        detail::Rng rng(detail::mix_seed(cfg.seed, 0x4a530000ULL + c));
        for (std::size_t idx : rng.sample_without_replacement(full_validation.size(),
                                                              std::min(want, full_validation.size())))
          eval_sets[c].push_back(full_validation[idx]);
      }
    } else if (routed_val[c].empty()) {
      artifact.fallback_full_validation.push_back(c);
      eval_sets[c] = full_validation;
    } else {
      eval_sets[c] = routed_val[c];
    }
  }

  for (int c = 0; c < c_count; ++c) {
    const std::size_t r = std::min(cfg.generation_demo_count, pools[c].size());
    std::vector<InstructionCandidate> candidates;
    try {
      candidates = generate_candidates(llm, pools[c], r, budgets[c],
                                       detail::mix_seed(cfg.seed, 1 + c), cfg.templates);
    } catch (const EmptyGeneration& e) {
      throw EmptyGeneration("expert " + std::to_string(c) + ": " + e.what());
    }
    std::vector<ScoredCandidate> scored(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const double s = score_instruction(llm, candidates[i].text, clusters[c], eval_sets[c],
                                         cfg.metric, cfg.templates, cfg.parallelism);
      scored[i] = ScoredCandidate{candidates[i], s};
    }
    const std::size_t best = detail::argmax_candidate(scored);
    Expert e;
    e.index = c;
    e.centroid = centroids[c];
    e.demos = clusters[c];
    e.instruction = scored[best].candidate.text;
    e.local_val_score = scored[best].score;
    e.candidates_evaluated = std::move(scored);
    artifact.experts.push_back(std::move(e));
  }
  artifact.validate();
  return artifact;
}

/// Region-Based Joint Search over pre-assigned demo clusters.
inline MixtureArtifact rbjs(LlmClient& llm, const std::vector<std::vector<Demo>>& clusters,
                            const std::vector<std::vector<Demo>>& routed_val,
                            const std::vector<EmbeddingVector>& centroids,
                            const SearchConfig& cfg) {
  return assign_instructions(AssignVariant::Rbjs, llm, clusters, routed_val, centroids, cfg);
}

}  // namespace mop
