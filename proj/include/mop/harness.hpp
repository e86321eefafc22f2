#pragma once

/**
 * Experiment engine: end-to-end mixture builds, the APE-family baselines,
 * test evaluation, hit-ratio diagnostics, OOD split construction, multi-seed
 * aggregation, win-rate matrices, and report emission.
 *
 * Every method is held to the same budget contract: exactly `total_budget`
 * instruction-generation completions per run. Runs take a client factory so
 * each (method, seed) job starts from a fresh budget and generation cursor;
 * with the scripted provider two identical runs are byte-identical.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mop/assignment.hpp"
#include "mop/clustering.hpp"
#include "mop/core.hpp"
#include "mop/detail/parallel.hpp"
#include "mop/detail/rand.hpp"
#include "mop/errors.hpp"
#include "mop/providers.hpp"
#include "mop/routing.hpp"
#include "mop/scoring.hpp"

namespace mop {

// ============================================================================
// Configuration
// ============================================================================

enum class Method {
  MoP,
  APE,
  APEPlusRandomDemos,
  APEPlusKCentroids,
  APEPlusNearestNeighbor,
  MoPIndependentSearch,
  MoPJointSearch,
  MoPRbjsSameCluster,
};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::MoP: return "mop";
    case Method::APE: return "ape";
    case Method::APEPlusRandomDemos: return "ape_random_demos";
    case Method::APEPlusKCentroids: return "ape_k_centroids";
    case Method::APEPlusNearestNeighbor: return "ape_nearest_neighbor";
    case Method::MoPIndependentSearch: return "mop_independent_search";
    case Method::MoPJointSearch: return "mop_joint_search";
    case Method::MoPRbjsSameCluster: return "mop_rbjs_same_cluster";
  }
  return "mop";
}

inline Method method_from_string(const std::string& s) {
  static const std::map<std::string, Method> table{
      {"mop", Method::MoP},
      {"ape", Method::APE},
      {"ape_random_demos", Method::APEPlusRandomDemos},
      {"ape_k_centroids", Method::APEPlusKCentroids},
      {"ape_nearest_neighbor", Method::APEPlusNearestNeighbor},
      {"mop_independent_search", Method::MoPIndependentSearch},
      {"mop_joint_search", Method::MoPJointSearch},
      {"mop_rbjs_same_cluster", Method::MoPRbjsSameCluster},
  };
  auto it = table.find(s);
  if (it == table.end()) throw ParseError("unknown method: " + s);
  return it->second;
}

enum class RoutingMode { Centroid, Random };

struct ExperimentConfig {
  std::string task_path;
  Method method = Method::MoP;
  int total_budget = 20;
  double alpha = 0.02;
  int c_min = 1;
  int c_max = 8;
  double demo_cap_fraction = 0.1;          // cap = ceil(fraction * N_train)
  std::size_t generation_demo_count = 5;   // r: demos per generation prompt
  std::size_t validation_sample = 0;       // q: 0 = score on the full validation split
  std::vector<std::uint64_t> seeds{0, 1, 2};
  RoutingMode routing = RoutingMode::Centroid;
  bool normalize_embeddings = false;       // cosine mode: unit-normalize embeddings
  bool embed_demo_outputs = false;         // cluster on "input\noutput" instead of input alone
  int parallelism = 1;
  double tie_threshold = 0.01;             // win-rate tie margin, in score units
  std::filesystem::path templates_dir;     // empty = built-in defaults

  std::size_t demo_cap(std::size_t n_train) const {
    const auto cap = static_cast<std::size_t>(
        std::ceil(demo_cap_fraction * static_cast<double>(n_train)));
    return std::max<std::size_t>(1, cap);
  }

  TemplateSet templates() const {
    return templates_dir.empty() ? TemplateSet::defaults() : TemplateSet::load_dir(templates_dir);
  }

  json to_json() const {
    return json{{"task_path", task_path},
                {"method", to_string(method)},
                {"total_budget", total_budget},
                {"alpha", alpha},
                {"c_min", c_min},
                {"c_max", c_max},
                {"demo_cap_fraction", demo_cap_fraction},
                {"generation_demo_count", generation_demo_count},
                {"validation_sample", validation_sample},
                {"seeds", seeds},
                {"routing", routing == RoutingMode::Centroid ? "centroid" : "random"},
                {"normalize_embeddings", normalize_embeddings},
                {"embed_demo_outputs", embed_demo_outputs},
                {"tie_threshold", tie_threshold}};
  }

  static ExperimentConfig from_json(const json& j) {
    ExperimentConfig cfg;
    if (j.contains("task_path")) cfg.task_path = j.at("task_path").get<std::string>();
    if (j.contains("method")) cfg.method = method_from_string(j.at("method").get<std::string>());
    if (j.contains("total_budget")) cfg.total_budget = j.at("total_budget").get<int>();
    if (j.contains("alpha")) cfg.alpha = j.at("alpha").get<double>();
    if (j.contains("c_min")) cfg.c_min = j.at("c_min").get<int>();
    if (j.contains("c_max")) cfg.c_max = j.at("c_max").get<int>();
    if (j.contains("demo_cap_fraction")) {
      const auto& f = j.at("demo_cap_fraction");
      if (f.is_string()) {
        // accepts "1/10" style rationals
        const std::string s = f.get<std::string>();
        const auto slash = s.find('/');
        if (slash == std::string::npos)
          cfg.demo_cap_fraction = std::stod(s);
        else
          cfg.demo_cap_fraction = std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
      } else {
        cfg.demo_cap_fraction = f.get<double>();
      }
    }
    if (j.contains("generation_demo_count"))
      cfg.generation_demo_count = j.at("generation_demo_count").get<std::size_t>();
    if (j.contains("validation_sample"))
      cfg.validation_sample = j.at("validation_sample").get<std::size_t>();
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("routing"))
      cfg.routing = j.at("routing").get<std::string>() == "random" ? RoutingMode::Random
                                                                   : RoutingMode::Centroid;
    if (j.contains("normalize_embeddings"))
      cfg.normalize_embeddings = j.at("normalize_embeddings").get<bool>();
    if (j.contains("embed_demo_outputs"))
      cfg.embed_demo_outputs = j.at("embed_demo_outputs").get<bool>();
    if (j.contains("parallelism")) cfg.parallelism = j.at("parallelism").get<int>();
    if (j.contains("tie_threshold")) cfg.tie_threshold = j.at("tie_threshold").get<double>();
    if (j.contains("templates_dir"))
      cfg.templates_dir = j.at("templates_dir").get<std::string>();
    if (cfg.total_budget < 1) throw ValidationError("total_budget must be >= 1");
    if (cfg.c_min < 1 || cfg.c_min > cfg.c_max)
      throw ValidationError("require 1 <= c_min <= c_max");
    if (cfg.seeds.empty()) throw ValidationError("seeds must be non-empty");
    return cfg;
  }

  std::string digest_for_seed(std::uint64_t seed) const {
    json j = to_json();
    j["seed"] = seed;
    return detail::sha256_hex(j.dump());
  }
};

struct RunResult {
  std::string method;
  std::string task;
  std::vector<double> per_seed_test_scores;
  double mean = 0.0;
  double std_dev = 0.0;  // population standard deviation across seeds
  std::int64_t budget_used = 0;
  std::string artifact_digest;

  json to_json() const {
    return json{{"method", method},
                {"task", task},
                {"per_seed_test_scores", per_seed_test_scores},
                {"mean", mean},
                {"std", std_dev},
                {"budget_used", budget_used},
                {"artifact_digest", artifact_digest}};
  }
};

namespace detail {

inline std::pair<double, double> mean_and_population_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

}  // namespace detail

// ============================================================================
// Mixture build (demo assignment + instruction assignment)
// ============================================================================

inline AssignVariant variant_for_method(Method m) {
  switch (m) {
    case Method::MoPIndependentSearch: return AssignVariant::IndependentSearch;
    case Method::MoPJointSearch: return AssignVariant::JointSearch;
    case Method::MoPRbjsSameCluster: return AssignVariant::RbjsSameCluster;
    default: return AssignVariant::Rbjs;
  }
}

/// Full pipeline: embed train inputs, pick the expert count by scaled
/// inertia, cluster with the per-cluster cap, route the validation split,
/// then run the instruction search for the configured variant.
inline MixtureArtifact build_mop(LlmClient& llm, const TaskDataset& task,
                                 const ExperimentConfig& cfg, std::uint64_t seed) {
  if (task.train.size() < static_cast<std::size_t>(cfg.c_min))
    throw DegenerateTask("train split smaller than C_min");
  if (task.validation.empty()) throw DegenerateTask("validation split is empty");

  std::vector<std::string> train_inputs;
  train_inputs.reserve(task.train.size());
  for (const auto& d : task.train)
    train_inputs.push_back(cfg.embed_demo_outputs ? d.input + "\n" + d.shown_output() : d.input);
  auto train_vecs = llm.embed(train_inputs);
  if (cfg.normalize_embeddings) train_vecs = unit_normalized(std::move(train_vecs));

  const int c_max = std::min<int>(cfg.c_max, static_cast<int>(task.train.size()));
  const auto selection = scaled_inertia_select(train_vecs, cfg.c_min, c_max, cfg.alpha, seed);
  const std::size_t cap = cfg.demo_cap(task.train.size());
  const ClusterAssignment assignment = kmeans_balanced(train_vecs, selection.c_star, seed, cap);

  std::vector<std::vector<Demo>> clusters(assignment.C);
  for (int c = 0; c < assignment.C; ++c)
    for (std::size_t i : assignment.members(c)) clusters[c].push_back(task.train[i]);

  // routing always embeds the bare input; that is all a test query has
  const auto routed_val = route_split(
      task.validation, assignment.centroids,
      [&llm, &cfg](const std::vector<std::string>& texts) {
        auto vecs = llm.embed(texts);
        return cfg.normalize_embeddings ? unit_normalized(std::move(vecs)) : vecs;
      });

  SearchConfig search;
  search.total_budget = cfg.total_budget;
  search.generation_demo_count = cfg.generation_demo_count;
  search.seed = seed;
  search.metric = task.metric;
  search.templates = cfg.templates();
  search.parallelism = cfg.parallelism;
  search.task_name = task.name;
  search.config_digest = cfg.digest_for_seed(seed);

  MixtureArtifact artifact = assign_instructions(variant_for_method(cfg.method), llm, clusters,
                                                 routed_val, assignment.centroids, search);
  artifact.normalized_embeddings = cfg.normalize_embeddings;
  for (std::size_t i : assignment.discarded)
    artifact.discarded_demo_ids.push_back(task.train[i].id);
  return artifact;
}

// ============================================================================
// Evaluation
// ============================================================================

struct EvalOutcome {
  ScoreReport report;
  std::vector<RoutingDecision> routing;
  std::vector<std::string> predictions;
};

/// Routes each test item to an expert (nearest centroid, or uniform when
/// RoutingMode::Random) and completes its expert prompt at temperature 0.
inline EvalOutcome evaluate(LlmClient& llm, const MixtureArtifact& artifact,
                            const std::vector<Demo>& test, Metric metric,
                            const TemplateSet& templates,
                            RoutingMode routing_mode = RoutingMode::Centroid,
                            std::uint64_t routing_seed = 0, int parallelism = 1) {
  if (artifact.experts.empty()) throw ValidationError("artifact has no experts");
  if (artifact.embedding_model_id != llm.embedding_model_id())
    throw ValidationError("artifact was built with embedding model '" +
                          artifact.embedding_model_id + "' but the provider embeds with '" +
                          llm.embedding_model_id() + "'");
  if (test.empty()) throw ValidationError("test set is empty");

  EvalOutcome outcome;
  outcome.routing.resize(test.size());
  if (routing_mode == RoutingMode::Centroid) {
    std::vector<std::string> inputs;
    inputs.reserve(test.size());
    for (const auto& d : test) inputs.push_back(d.input);
    auto vecs = llm.embed(inputs);
    if (artifact.normalized_embeddings) vecs = unit_normalized(std::move(vecs));
    const auto centroids = artifact.centroids();
    for (std::size_t i = 0; i < test.size(); ++i) {
      outcome.routing[i] = route(vecs[i], centroids);
      outcome.routing[i].query_id = test[i].id;
    }
  } else {
    detail::Rng rng(routing_seed);
    for (std::size_t i = 0; i < test.size(); ++i) {
      outcome.routing[i].query_id = test[i].id;
      outcome.routing[i].expert_index =
          static_cast<int>(rng.next_index(artifact.experts.size()));
    }
  }

  outcome.predictions.resize(test.size());
  detail::parallel_for(test.size(), parallelism, [&](std::size_t i) {
    const Expert& expert = artifact.experts[outcome.routing[i].expert_index];
    const std::string prompt =
        assemble_prompt(templates, expert.instruction, expert.demos, test[i].input);
    outcome.predictions[i] = llm.complete(CompletionRequest{prompt, kEvaluationTemperature, 256, {}});
  });
  outcome.report = score_batch(outcome.predictions, test, metric);
  return outcome;
}

/// Hit-ratio diagnostic: for each test item, every expert answers with a
/// demo-only prompt (empty instruction); the histogram over the number of
/// correct experts (0..C) is returned. Requires C >= 2.
inline std::vector<std::size_t> hit_ratio(LlmClient& llm, const MixtureArtifact& artifact,
                                          const std::vector<Demo>& test, Metric metric,
                                          const TemplateSet& templates, int parallelism = 1) {
  const int c_count = artifact.expert_count();
  if (c_count < 2) throw ValidationError("hit_ratio requires at least two experts");
  if (test.empty()) throw ValidationError("test set is empty");

  std::vector<std::size_t> histogram(static_cast<std::size_t>(c_count) + 1, 0);
  std::vector<std::size_t> hits(test.size(), 0);
  detail::parallel_for(test.size(), parallelism, [&](std::size_t i) {
    std::size_t correct = 0;
    for (const auto& expert : artifact.experts) {
      const std::string prompt = assemble_prompt(templates, "", expert.demos, test[i].input);
      const std::string prediction =
          llm.complete(CompletionRequest{prompt, kEvaluationTemperature, 256, {}});
      if (score_prediction(prediction, test[i], metric) >= 1.0 - 1e-12) ++correct;
    }
    hits[i] = correct;
  });
  for (std::size_t h : hits) ++histogram[h];
  return histogram;
}

// ============================================================================
// OOD split construction
// ============================================================================

/// Adversarial split: 2-means over all demo embeddings; the larger cluster
/// becomes train (with a seeded 80/20 validation carve), the smaller becomes
/// test. Equal-sized clusters break toward cluster 0 as train.
inline TaskDataset make_ood_split(LlmClient& llm, const TaskDataset& task, std::uint64_t seed) {
  std::vector<Demo> pool;
  pool.insert(pool.end(), task.train.begin(), task.train.end());
  pool.insert(pool.end(), task.validation.begin(), task.validation.end());
  pool.insert(pool.end(), task.test.begin(), task.test.end());
  if (pool.size() < 4) throw DegenerateTask("need at least 4 demos for an OOD split");

  std::vector<std::string> inputs;
  inputs.reserve(pool.size());
  for (const auto& d : pool) inputs.push_back(d.input);
  const auto vecs = llm.embed(inputs);
  const ClusterAssignment assignment = kmeans(vecs, 2, seed);

  std::vector<std::size_t> sizes(2, 0);
  for (int l : assignment.labels) ++sizes[l];
  const int train_cluster = sizes[1] > sizes[0] ? 1 : 0;

  std::vector<Demo> train_side, test_side;
  for (std::size_t i = 0; i < pool.size(); ++i)
    (assignment.labels[i] == train_cluster ? train_side : test_side).push_back(pool[i]);

  // seeded 80/20 carve of the train side into train/validation
  std::vector<std::size_t> order(train_side.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  detail::Rng rng(detail::mix_seed(seed, 0x6f6f64ULL));  // "ood"
  rng.shuffle(order);
  const std::size_t val_count = std::max<std::size_t>(1, train_side.size() / 5);

  TaskDataset out;
  out.name = task.name + "_ood";
  out.metric = task.metric;
  for (std::size_t k = 0; k < order.size(); ++k)
    (k < val_count ? out.validation : out.train).push_back(train_side[order[k]]);
  out.test = std::move(test_side);
  validate_task(out);
  return out;
}

// ============================================================================
// Baselines
// ============================================================================

namespace detail {

struct ApeSearch {
  std::string instruction;
  std::vector<ScoredCandidate> candidates;
};

/// Eq. 3/4 search for one demo-free instruction: total_budget candidates from
/// a seeded train subset, ranked demo-free on the validation split (or a
/// seeded sample of `validation_sample` items).
inline ApeSearch ape_select_instruction(LlmClient& llm, const TaskDataset& task,
                                        const ExperimentConfig& cfg, std::uint64_t seed,
                                        const TemplateSet& templates) {
  if (task.train.empty()) throw DegenerateTask("train split is empty");
  if (task.validation.empty()) throw DegenerateTask("validation split is empty");
  const std::size_t r = std::min(cfg.generation_demo_count, task.train.size());
  auto candidates = generate_candidates(llm, task.train, r, cfg.total_budget,
                                        mix_seed(seed, 0x617065ULL), templates);  // "ape"

  std::vector<Demo> val_subset = task.validation;
  if (cfg.validation_sample > 0 && cfg.validation_sample < task.validation.size()) {
    Rng rng(mix_seed(seed, 0x71ULL));  // "q"
    val_subset.clear();
    for (std::size_t idx :
         rng.sample_without_replacement(task.validation.size(), cfg.validation_sample))
      val_subset.push_back(task.validation[idx]);
  }

  ApeSearch result;
  result.candidates.resize(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double s = score_instruction(llm, candidates[i].text, {}, val_subset, task.metric,
                                       templates, cfg.parallelism);
    result.candidates[i] = ScoredCandidate{candidates[i], s};
  }
  result.instruction = result.candidates[argmax_candidate(result.candidates)].candidate.text;
  return result;
}

inline ScoreReport score_fixed_prompt(LlmClient& llm, const std::string& instruction,
                                      const std::vector<Demo>& demos,
                                      const std::vector<Demo>& test, Metric metric,
                                      const TemplateSet& templates, int parallelism,
                                      std::vector<std::string>* predictions_out = nullptr) {
  std::vector<std::string> predictions(test.size());
  parallel_for(test.size(), parallelism, [&](std::size_t i) {
    const std::string prompt = assemble_prompt(templates, instruction, demos, test[i].input);
    predictions[i] = llm.complete(CompletionRequest{prompt, kEvaluationTemperature, 256, {}});
  });
  ScoreReport report = score_batch(predictions, test, metric);
  if (predictions_out) *predictions_out = std::move(predictions);
  return report;
}

}  // namespace detail

/// Demos pinned to the K-means centroids: k clusters, nearest member each.
inline std::vector<Demo> k_centroid_demos(LlmClient& llm, const std::vector<Demo>& train,
                                          std::size_t k, std::uint64_t seed) {
  std::vector<std::string> inputs;
  inputs.reserve(train.size());
  for (const auto& d : train) inputs.push_back(d.input);
  const auto vecs = llm.embed(inputs);
  const auto points = detail::strip_model(vecs);
  const std::size_t feasible = std::min(k, detail::count_distinct(points));
  const ClusterAssignment assignment = kmeans(vecs, static_cast<int>(feasible), seed);
  std::vector<Demo> out;
  for (int c = 0; c < assignment.C; ++c) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (assignment.labels[i] != c) continue;
      const double d = detail::squared_distance(points[i], assignment.centroids[c].values);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    out.push_back(train[best]);
  }
  return out;
}

/// The `cap` train demos nearest to a query embedding, nearest first.
inline std::vector<Demo> nearest_neighbor_demos(const std::vector<Demo>& train,
                                                const std::vector<EmbeddingVector>& train_vecs,
                                                const EmbeddingVector& query, std::size_t cap) {
  std::vector<std::pair<double, std::size_t>> ranked(train.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    ranked[i] = {detail::squared_distance(train_vecs[i].values, query.values), i};
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Demo> out;
  for (std::size_t i = 0; i < std::min(cap, ranked.size()); ++i)
    out.push_back(train[ranked[i].second]);
  return out;
}

// ============================================================================
// Single runs and multi-seed experiments
// ============================================================================

using ClientFactory = std::function<std::shared_ptr<LlmClient>()>;

struct SingleRun {
  double test_score = 0.0;
  std::string digest;                // artifact digest (MoP) or prompt digest (baselines)
  std::int64_t generation_calls = 0; // instruction-generation completions used
  std::optional<MixtureArtifact> artifact;
};

/// One (method, seed) run against a fresh client.
inline SingleRun run_single(LlmClient& llm, const TaskDataset& task, const ExperimentConfig& cfg,
                            std::uint64_t seed) {
  const TemplateSet templates = cfg.templates();
  SingleRun run;
  switch (cfg.method) {
    case Method::MoP:
    case Method::MoPIndependentSearch:
    case Method::MoPJointSearch:
    case Method::MoPRbjsSameCluster: {
      MixtureArtifact artifact = build_mop(llm, task, cfg, seed);
      const EvalOutcome outcome = evaluate(llm, artifact, task.test, task.metric, templates,
                                           cfg.routing, detail::mix_seed(seed, 0x726f7574ULL),
                                           cfg.parallelism);
      run.test_score = outcome.report.mean;
      run.digest = artifact.digest();
      run.artifact = std::move(artifact);
      break;
    }
    case Method::APE: {
      const auto search = detail::ape_select_instruction(llm, task, cfg, seed, templates);
      run.test_score = detail::score_fixed_prompt(llm, search.instruction, {}, task.test,
                                                  task.metric, templates, cfg.parallelism)
                           .mean;
      run.digest = detail::sha256_hex(search.instruction);
      break;
    }
    case Method::APEPlusRandomDemos: {
      const auto search = detail::ape_select_instruction(llm, task, cfg, seed, templates);
      const std::size_t cap = std::min(cfg.demo_cap(task.train.size()), task.train.size());
      detail::Rng rng(detail::mix_seed(seed, 0x64656d6fULL));  // "demo"
      std::vector<Demo> demos;
      for (std::size_t idx : rng.sample_without_replacement(task.train.size(), cap))
        demos.push_back(task.train[idx]);
      run.test_score = detail::score_fixed_prompt(llm, search.instruction, demos, task.test,
                                                  task.metric, templates, cfg.parallelism)
                           .mean;
      std::string fingerprint = search.instruction;
      for (const auto& d : demos) fingerprint += "|" + d.id;
      run.digest = detail::sha256_hex(fingerprint);
      break;
    }
    case Method::APEPlusKCentroids: {
      const auto search = detail::ape_select_instruction(llm, task, cfg, seed, templates);
      const std::size_t cap = std::min(cfg.demo_cap(task.train.size()), task.train.size());
      const auto demos = k_centroid_demos(llm, task.train, cap, seed);
      run.test_score = detail::score_fixed_prompt(llm, search.instruction, demos, task.test,
                                                  task.metric, templates, cfg.parallelism)
                           .mean;
      std::string fingerprint = search.instruction;
      for (const auto& d : demos) fingerprint += "|" + d.id;
      run.digest = detail::sha256_hex(fingerprint);
      break;
    }
    case Method::APEPlusNearestNeighbor: {
      const auto search = detail::ape_select_instruction(llm, task, cfg, seed, templates);
      const std::size_t cap = std::min(cfg.demo_cap(task.train.size()), task.train.size());
      std::vector<std::string> train_inputs, test_inputs;
      for (const auto& d : task.train) train_inputs.push_back(d.input);
      for (const auto& d : task.test) test_inputs.push_back(d.input);
      const auto train_vecs = llm.embed(train_inputs);
      const auto test_vecs = llm.embed(test_inputs);
      std::vector<std::string> predictions(task.test.size());
      detail::parallel_for(task.test.size(), cfg.parallelism, [&](std::size_t i) {
        const auto demos = nearest_neighbor_demos(task.train, train_vecs, test_vecs[i], cap);
        const std::string prompt =
            assemble_prompt(templates, search.instruction, demos, task.test[i].input);
        predictions[i] = llm.complete(CompletionRequest{prompt, kEvaluationTemperature, 256, {}});
      });
      run.test_score = score_batch(predictions, task.test, task.metric).mean;
      run.digest = detail::sha256_hex(search.instruction + "|nn");
      break;
    }
  }
  run.generation_calls = llm.budget().generation_completions();
  return run;
}

/// One seed of a configured method, wrapped into a single-seed RunResult.
inline RunResult run_baseline(const ClientFactory& make_client, const TaskDataset& task,
                              const ExperimentConfig& cfg, std::uint64_t seed) {
  auto llm = make_client();
  const SingleRun run = run_single(*llm, task, cfg, seed);
  RunResult result;
  result.method = to_string(cfg.method);
  result.task = task.name;
  result.per_seed_test_scores = {run.test_score};
  result.mean = run.test_score;
  result.std_dev = 0.0;
  result.budget_used = run.generation_calls;
  result.artifact_digest = run.digest;
  return result;
}

/// All configured seeds of one method on one task; each seed runs against a
/// fresh client from the factory.
inline RunResult run_experiment(const ClientFactory& make_client, const TaskDataset& task,
                                const ExperimentConfig& cfg) {
  RunResult result;
  result.method = to_string(cfg.method);
  result.task = task.name;
  std::string digest_chain;
  for (std::uint64_t seed : cfg.seeds) {
    auto llm = make_client();
    const SingleRun run = run_single(*llm, task, cfg, seed);
    result.per_seed_test_scores.push_back(run.test_score);
    result.budget_used = std::max(result.budget_used, run.generation_calls);
    digest_chain += run.digest;
  }
  const auto [mean, std_dev] = detail::mean_and_population_std(result.per_seed_test_scores);
  result.mean = mean;
  result.std_dev = std_dev;
  result.artifact_digest = detail::sha256_hex(digest_chain);
  return result;
}

// ============================================================================
// Win-rate matrices and reports
// ============================================================================

struct WinRateMatrix {
  std::vector<std::string> methods;
  std::vector<std::vector<double>> values;  // values[a][b] in [0, 1]
};

/// Entry (A, B) = (wins + 0.5 * ties) / #tasks, where A wins a task iff
/// mean_A - mean_B > tie_threshold. Guarantees M[A][B] + M[B][A] = 1.
inline WinRateMatrix win_rate_matrix(const std::vector<RunResult>& results,
                                     const std::vector<std::string>& methods,
                                     const std::vector<std::string>& tasks,
                                     double tie_threshold = 0.01) {
  std::map<std::pair<std::string, std::string>, double> means;
  for (const auto& r : results) means[{r.method, r.task}] = r.mean;
  for (const auto& m : methods)
    for (const auto& t : tasks)
      if (!means.count({m, t}))
        throw MissingCell("no result for method '" + m + "' on task '" + t + "'");

  WinRateMatrix matrix;
  matrix.methods = methods;
  matrix.values.assign(methods.size(), std::vector<double>(methods.size(), 0.0));
  for (std::size_t a = 0; a < methods.size(); ++a) {
    for (std::size_t b = 0; b < methods.size(); ++b) {
      double wins = 0.0, ties = 0.0;
      for (const auto& t : tasks) {
        const double diff = means[{methods[a], t}] - means[{methods[b], t}];
        if (diff > tie_threshold)
          wins += 1.0;
        else if (diff >= -tie_threshold)
          ties += 1.0;
      }
      matrix.values[a][b] = (wins + 0.5 * ties) / static_cast<double>(tasks.size());
    }
  }
  return matrix;
}

namespace detail {

inline std::string format_score(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

}  // namespace detail

/// Writes per-task JSON files, aggregate.csv (method x task x mean/std) and
/// win_rate.csv into out_dir. Output is deterministic for identical inputs.
inline void report(const std::vector<RunResult>& results,
                   const std::vector<std::string>& methods, const std::vector<std::string>& tasks,
                   const std::filesystem::path& out_dir, double tie_threshold = 0.01) {
  if (results.empty()) throw ValidationError("no results to report");
  std::filesystem::create_directories(out_dir);

  std::map<std::pair<std::string, std::string>, const RunResult*> by_cell;
  for (const auto& r : results) by_cell[{r.method, r.task}] = &r;

  for (const auto& task : tasks) {
    json entries = json::array();
    for (const auto& method : methods) {
      auto it = by_cell.find({method, task});
      if (it == by_cell.end()) throw MissingCell("no result for '" + method + "' on '" + task + "'");
      entries.push_back(it->second->to_json());
    }
    std::ofstream out(out_dir / ("task_" + task + ".json"), std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write task report");
    out << json{{"task", task}, {"results", entries}}.dump(2) << "\n";
  }

  {
    std::ofstream csv(out_dir / "aggregate.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw IoError("cannot write aggregate.csv");
    csv << "method,task,mean,std,budget_used\n";
    for (const auto& method : methods)
      for (const auto& task : tasks) {
        const RunResult* r = by_cell.at({method, task});
        csv << method << "," << task << "," << detail::format_score(r->mean) << ","
            << detail::format_score(r->std_dev) << "," << r->budget_used << "\n";
      }
  }

  {
    const WinRateMatrix matrix = win_rate_matrix(results, methods, tasks, tie_threshold);
    std::ofstream csv(out_dir / "win_rate.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw IoError("cannot write win_rate.csv");
    csv << "method";
    for (const auto& m : matrix.methods) csv << "," << m;
    csv << "\n";
    for (std::size_t a = 0; a < matrix.methods.size(); ++a) {
      csv << matrix.methods[a];
      for (std::size_t b = 0; b < matrix.methods.size(); ++b)
        csv << "," << detail::format_score(matrix.values[a][b]);
      csv << "\n";
    }
  }
}

/// methods x tasks x seeds sweep. Jobs are independent (fresh client each)
/// and may run on a bounded worker pool; results merge deterministically.
struct BenchConfig {
  std::vector<std::string> task_paths;
  std::vector<Method> methods;
  ExperimentConfig base;  // shared knobs; method/task_path overridden per job
  int job_workers = 1;
};

inline std::vector<RunResult> bench(const ClientFactory& make_client, const BenchConfig& bench_cfg,
                                    const std::filesystem::path& out_dir) {
  if (bench_cfg.task_paths.empty() || bench_cfg.methods.empty())
    throw ValidationError("bench needs at least one task and one method");

  std::vector<TaskDataset> datasets;
  datasets.reserve(bench_cfg.task_paths.size());
  for (const auto& p : bench_cfg.task_paths) datasets.push_back(load_task(p));

  struct Job {
    std::size_t task_index;
    Method method;
  };
  std::vector<Job> jobs;
  for (std::size_t t = 0; t < datasets.size(); ++t)
    for (Method m : bench_cfg.methods) jobs.push_back({t, m});

  std::vector<RunResult> results(jobs.size());
  detail::parallel_for(jobs.size(), bench_cfg.job_workers, [&](std::size_t i) {
    ExperimentConfig cfg = bench_cfg.base;
    cfg.method = jobs[i].method;
    cfg.task_path = bench_cfg.task_paths[jobs[i].task_index];
    results[i] = run_experiment(make_client, datasets[jobs[i].task_index], cfg);
  });

  std::vector<std::string> method_names;
  for (Method m : bench_cfg.methods) method_names.push_back(to_string(m));
  std::vector<std::string> task_names;
  for (const auto& d : datasets) task_names.push_back(d.name);
  report(results, method_names, task_names, out_dir, bench_cfg.base.tie_threshold);
  return results;
}

}  // namespace mop
