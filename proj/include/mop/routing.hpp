#pragma once

/**
 * Query-to-expert routing. Routing is nearest-centroid under squared
 * Euclidean distance, matching the K-means construction of the experts.
 * The literal printed rule (argmin of a similarity kernel, which would pick
 * the farthest expert) is kept behind RoutingRule::LiteralKernelArgmin for
 * debugging.
 */

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "mop/clustering.hpp"
#include "mop/core.hpp"
#include "mop/detail/rand.hpp"
#include "mop/errors.hpp"
#include "mop/providers.hpp"

namespace mop {

struct RoutingDecision {
  std::string query_id;
  int expert_index = 0;
  double distance = 0.0;  // squared distance to the winning centroid
  double margin = 0.0;    // runner-up minus winner; 0 when C == 1

  json to_json() const {
    return json{{"query_id", query_id},
                {"expert_index", expert_index},
                {"distance", distance},
                {"margin", margin}};
  }
};

enum class RoutingRule { NearestCentroid, LiteralKernelArgmin };

/// Routes one query embedding to an expert. Ties break toward the lower index.
inline RoutingDecision route(const EmbeddingVector& query,
                             const std::vector<EmbeddingVector>& centroids,
                             RoutingRule rule = RoutingRule::NearestCentroid) {
  if (centroids.empty()) throw DegenerateInput("route requires at least one centroid");
  std::vector<double> scores(centroids.size());
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    scores[c] = rule == RoutingRule::NearestCentroid
                    ? detail::squared_distance(query.values, centroids[c].values)
                    : kernel_value(KernelSpec::dot_product(), query.values, centroids[c].values);
  }
  RoutingDecision decision;
  decision.expert_index = 0;
  for (std::size_t c = 1; c < scores.size(); ++c)
    if (scores[c] < scores[decision.expert_index]) decision.expert_index = static_cast<int>(c);
  decision.distance = scores[decision.expert_index];
  if (scores.size() > 1) {
    double runner_up = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < scores.size(); ++c)
      if (static_cast<int>(c) != decision.expert_index) runner_up = std::min(runner_up, scores[c]);
    decision.margin = runner_up - decision.distance;
  }
  return decision;
}

using EmbedFn = std::function<std::vector<EmbeddingVector>(const std::vector<std::string>&)>;

/// Partitions queries into one bucket per expert by routing each embedded
/// input. The buckets are a partition of the input list.
inline std::vector<std::vector<Demo>> route_split(const std::vector<Demo>& queries,
                                                  const std::vector<EmbeddingVector>& centroids,
                                                  const EmbedFn& embed,
                                                  RoutingRule rule = RoutingRule::NearestCentroid,
                                                  std::vector<RoutingDecision>* audit = nullptr) {
  std::vector<std::vector<Demo>> buckets(centroids.size());
  if (queries.empty()) return buckets;
  std::vector<std::string> inputs;
  inputs.reserve(queries.size());
  for (const auto& q : queries) inputs.push_back(q.input);
  const auto embedded = embed(inputs);
  if (embedded.size() != queries.size())
    throw ValidationError("embed returned a different number of vectors than inputs");
  std::size_t routed = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    RoutingDecision d = route(embedded[i], centroids, rule);
    d.query_id = queries[i].id;
    buckets[d.expert_index].push_back(queries[i]);
    ++routed;
    if (audit) audit->push_back(std::move(d));
  }
  if (routed != queries.size()) throw ValidationError("routed split is not a partition");
  return buckets;
}

/// Uniform seeded assignment; the random-routing ablation.
inline std::vector<std::vector<Demo>> route_random(const std::vector<Demo>& queries, int C,
                                                   std::uint64_t seed) {
  if (C < 1) throw DegenerateInput("route_random requires C >= 1");
  std::vector<std::vector<Demo>> buckets(C);
  detail::Rng rng(seed);
  for (const auto& q : queries) buckets[rng.next_index(static_cast<std::size_t>(C))].push_back(q);
  return buckets;
}

}  // namespace mop
