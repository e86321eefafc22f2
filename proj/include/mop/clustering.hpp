#pragma once

/**
 * Demo assignment: Lloyd's K-means with k-means++ seeding, the balanced
 * variant with a per-cluster cap, scaled-inertia selection of the cluster
 * count, the kernel-form clustering objective, and the kernel-regression
 * predictor used as a testable oracle for the demo-assignment theory.
 *
 * All routines are pure functions over immutable vectors and deterministic
 * for a fixed seed.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mop/detail/rand.hpp"
#include "mop/errors.hpp"
#include "mop/providers.hpp"

namespace mop {

// ============================================================================
// Kernels
// ============================================================================

struct KernelSpec {
  enum class Kind { DotProduct, RBF };
  Kind kind = Kind::DotProduct;
  double bandwidth = 1.0;  // RBF only

  static KernelSpec dot_product() { return {Kind::DotProduct, 1.0}; }
  static KernelSpec rbf(double bandwidth) { return {Kind::RBF, bandwidth}; }
};

namespace detail {

inline void check_same_dim(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw DimensionMismatch("vector dimensions differ: " + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
}

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  check_same_dim(a, b);
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    d += diff * diff;
  }
  return d;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  check_same_dim(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

inline double kernel_value(const KernelSpec& kernel, const std::vector<double>& a,
                           const std::vector<double>& b) {
  switch (kernel.kind) {
    case KernelSpec::Kind::DotProduct:
      return detail::dot(a, b);
    case KernelSpec::Kind::RBF: {
      if (!(kernel.bandwidth > 0.0) || !std::isfinite(kernel.bandwidth))
        throw ValidationError("RBF bandwidth must be finite and positive");
      const double d2 = detail::squared_distance(a, b);
      return std::exp(-d2 / (2.0 * kernel.bandwidth * kernel.bandwidth));
    }
  }
  return 0.0;
}

// ============================================================================
// Cluster assignment
// ============================================================================

struct ClusterAssignment {
  int C = 0;
  std::vector<int> labels;                  // one per input vector
  std::vector<EmbeddingVector> centroids;   // mean of retained members
  double inertia = 0.0;                     // sum of squared distances, retained members
  std::vector<std::size_t> discarded;       // indices trimmed by the balanced cap
  std::vector<double> objective_trace;      // Lloyd objective after each iteration

  bool is_discarded(std::size_t index) const {
    return std::binary_search(discarded.begin(), discarded.end(), index);
  }

  /// Members of cluster c, excluding discarded indices.
  std::vector<std::size_t> members(int c) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c && !is_discarded(i)) out.push_back(i);
    return out;
  }

  /// `ids` maps vector index -> demo id for the discard list; pass {} to use
  /// stringified indices.
  nlohmann::json to_json(const std::vector<std::string>& ids = {}) const {
    nlohmann::json centroid_rows = nlohmann::json::array();
    for (const auto& c : centroids) centroid_rows.push_back(c.values);
    nlohmann::json discarded_ids = nlohmann::json::array();
    for (std::size_t i : discarded)
      discarded_ids.push_back(i < ids.size() ? ids[i] : std::to_string(i));
    return nlohmann::json{{"C", C},
                {"labels", labels},
                {"centroids", centroid_rows},
                {"inertia", inertia},
                {"discarded_ids", discarded_ids}};
  }
};

namespace detail {

inline std::vector<std::vector<double>> strip_model(const std::vector<EmbeddingVector>& vectors) {
  if (vectors.empty()) throw DegenerateInput("kmeans requires at least one vector");
  std::vector<std::vector<double>> out;
  out.reserve(vectors.size());
  const std::size_t dim = vectors.front().dim();
  for (const auto& v : vectors) {
    if (v.dim() != dim)
      throw DimensionMismatch("embedding dimensions differ: " + std::to_string(dim) + " vs " +
                              std::to_string(v.dim()));
    out.push_back(v.values);
  }
  return out;
}

inline std::size_t count_distinct(const std::vector<std::vector<double>>& points) {
  std::set<std::vector<double>> distinct(points.begin(), points.end());
  return distinct.size();
}

inline std::vector<std::vector<double>> compute_centroids(
    const std::vector<std::vector<double>>& points, const std::vector<int>& labels, int C) {
  const std::size_t dim = points.front().size();
  std::vector<std::vector<double>> centroids(C, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(C, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto& c = centroids[labels[i]];
    for (std::size_t d = 0; d < dim; ++d) c[d] += points[i][d];
    ++counts[labels[i]];
  }
  for (int c = 0; c < C; ++c) {
    if (counts[c] == 0) continue;
    for (double& x : centroids[c]) x /= static_cast<double>(counts[c]);
  }
  return centroids;
}

}  // namespace detail

/// L2-normalizes a vector; zero vectors pass through unchanged. Clustering
/// and routing on unit-normalized embeddings make squared Euclidean distance
/// monotone in cosine similarity, which is the cosine-distance mode.
inline EmbeddingVector unit_normalized(const EmbeddingVector& v) {
  double norm = 0.0;
  for (double x : v.values) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) return v;
  EmbeddingVector out = v;
  for (double& x : out.values) x /= norm;
  return out;
}

inline std::vector<EmbeddingVector> unit_normalized(std::vector<EmbeddingVector> vectors) {
  for (auto& v : vectors) v = unit_normalized(v);
  return vectors;
}

/// Recomputes Eq-9-style inertia for an arbitrary labeling (members = all
/// points; balanced discards must be filtered by the caller).
inline double inertia_for_labels(const std::vector<EmbeddingVector>& vectors,
                                 const std::vector<int>& labels) {
  if (vectors.size() != labels.size())
    throw ValidationError("labels and vectors differ in length");
  const auto points = detail::strip_model(vectors);
  const int C = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  const auto centroids = detail::compute_centroids(points, labels, C);
  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i)
    total += detail::squared_distance(points[i], centroids[labels[i]]);
  return total;
}

namespace detail {

/// One Lloyd run from a k-means++ start, to assignment fixpoint or 300
/// iterations. Empty clusters are reseeded with the point farthest from its
/// current centroid.
inline ClusterAssignment lloyd_once(const std::vector<std::vector<double>>& points, int C,
                                    std::uint64_t seed, const std::string& model_id) {
  const std::size_t n = points.size();
  detail::Rng rng(seed);

  // k-means++ seeding
  std::vector<std::vector<double>> centroids;
  centroids.reserve(C);
  centroids.push_back(points[rng.next_index(n)]);
  std::vector<double> dist2(n);
  while (centroids.size() < static_cast<std::size_t>(C)) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, detail::squared_distance(points[i], c));
      dist2[i] = best;
      total += best;
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      const double target = rng.next_double() * total;
      double acc = 0.0;
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc >= target && dist2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = rng.next_index(n);
    }
    centroids.push_back(points[chosen]);
  }

  constexpr int kMaxIterations = 300;
  std::vector<int> labels(n, 0);
  ClusterAssignment result;
  for (int iter = 0; iter < kMaxIterations; ++iter) {
    // assignment step; ties broken toward the lower centroid index
    bool changed = iter == 0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = detail::squared_distance(points[i], centroids[0]);
      for (int c = 1; c < C; ++c) {
        const double d = detail::squared_distance(points[i], centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (labels[i] != best) {
        labels[i] = best;
        changed = true;
      }
    }

    // empty-cluster repair: reseed with the point farthest from its centroid
    std::vector<std::size_t> counts(C, 0);
    for (int l : labels) ++counts[l];
    for (int c = 0; c < C; ++c) {
      if (counts[c] > 0) continue;
      std::size_t farthest = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[labels[i]] <= 1) continue;
        const double d = detail::squared_distance(points[i], centroids[labels[i]]);
        if (d > far_d) {
          far_d = d;
          farthest = i;
        }
      }
      --counts[labels[farthest]];
      labels[farthest] = c;
      counts[c] = 1;
      changed = true;
    }

    // update step
    centroids = detail::compute_centroids(points, labels, C);
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      objective += detail::squared_distance(points[i], centroids[labels[i]]);
    result.objective_trace.push_back(objective);
    if (!changed) break;
  }

  result.C = C;
  result.labels = std::move(labels);
  result.inertia = result.objective_trace.back();
  result.centroids.reserve(C);
  for (auto& c : centroids) result.centroids.push_back(EmbeddingVector{std::move(c), model_id});
  return result;
}

}  // namespace detail

/// K-means: the best of 10 seeded k-means++ Lloyd runs (lowest inertia, ties
/// toward the earlier restart). Deterministic for a fixed seed.
inline ClusterAssignment kmeans(const std::vector<EmbeddingVector>& vectors, int C,
                                std::uint64_t seed) {
  const auto points = detail::strip_model(vectors);
  const std::size_t n = points.size();
  if (C < 1 || static_cast<std::size_t>(C) > n)
    throw DegenerateInput("C must be in [1, n]; got C=" + std::to_string(C) +
                          ", n=" + std::to_string(n));
  if (static_cast<std::size_t>(C) > detail::count_distinct(points))
    throw DegenerateInput("C exceeds the number of distinct vectors");

  constexpr int kRestarts = 10;
  const std::string model_id = vectors.front().model_id;
  ClusterAssignment best;
  for (int restart = 0; restart < kRestarts; ++restart) {
    ClusterAssignment run =
        detail::lloyd_once(points, C, detail::mix_seed(seed, static_cast<std::uint64_t>(restart)),
                           model_id);
    if (restart == 0 || run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

/// K-means, then each cluster trimmed to at most `cap` members by uniform
/// seeded discard. Discarded indices are recorded; centroids and inertia are
/// recomputed over the retained members.
inline ClusterAssignment kmeans_balanced(const std::vector<EmbeddingVector>& vectors, int C,
                                         std::uint64_t seed, std::size_t cap) {
  if (cap == 0) throw ValidationError("cap must be positive");
  ClusterAssignment result = kmeans(vectors, C, seed);
  detail::Rng rng(detail::mix_seed(seed, 0x62616c616e636564ULL));  // "balanced"
  for (int c = 0; c < C; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < result.labels.size(); ++i)
      if (result.labels[i] == c) members.push_back(i);
    if (members.size() <= cap) continue;
    const auto drop = rng.sample_without_replacement(members.size(), members.size() - cap);
    for (std::size_t k : drop) result.discarded.push_back(members[k]);
  }
  std::sort(result.discarded.begin(), result.discarded.end());
  if (result.discarded.empty()) return result;

  // recompute centroids and inertia over retained members
  const auto points = detail::strip_model(vectors);
  const std::size_t dim = points.front().size();
  std::vector<std::vector<double>> sums(C, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(C, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (result.is_discarded(i)) continue;
    for (std::size_t d = 0; d < dim; ++d) sums[result.labels[i]][d] += points[i][d];
    ++counts[result.labels[i]];
  }
  for (int c = 0; c < C; ++c)
    for (std::size_t d = 0; d < dim; ++d)
      result.centroids[c].values[d] = sums[c][d] / static_cast<double>(counts[c]);
  result.inertia = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (result.is_discarded(i)) continue;
    result.inertia += detail::squared_distance(points[i], result.centroids[result.labels[i]].values);
  }
  return result;
}

// ============================================================================
// Scaled-inertia model selection
// ============================================================================

struct ScaledInertiaEntry {
  int C = 0;
  double inertia = 0.0;
  double score = 0.0;
};

struct ScaledInertiaResult {
  int c_star = 0;
  std::vector<ScaledInertiaEntry> per_c;
};

/// Scores each C in [C_min, C_max] by inertia(C)/inertia(C_min) + alpha*C and
/// returns the argmin, ties broken toward smaller C. With `literal_formula`
/// the raw printed form inertia(C) + alpha*C is used instead. C values beyond
/// the number of distinct vectors are infeasible and skipped.
inline ScaledInertiaResult scaled_inertia_select(const std::vector<EmbeddingVector>& vectors,
                                                 int c_min, int c_max, double alpha,
                                                 std::uint64_t seed,
                                                 bool literal_formula = false) {
  if (c_min < 1 || c_min > c_max)
    throw ValidationError("require 1 <= C_min <= C_max");
  if (static_cast<std::size_t>(c_max) > vectors.size())
    throw DegenerateInput("C_max exceeds the number of vectors");
  const auto points = detail::strip_model(vectors);
  const int feasible_max =
      std::min<int>(c_max, static_cast<int>(detail::count_distinct(points)));
  if (feasible_max < c_min)
    throw DegenerateInput("C_min exceeds the number of distinct vectors");

  ScaledInertiaResult result;
  double base_inertia = 0.0;
  for (int C = c_min; C <= feasible_max; ++C) {
    const ClusterAssignment a = kmeans(vectors, C, seed);
    if (C == c_min) base_inertia = a.inertia;
    double score;
    if (literal_formula) {
      score = a.inertia + alpha * C;
    } else {
      const double normalized = base_inertia > 0.0 ? a.inertia / base_inertia : 0.0;
      score = normalized + alpha * C;
    }
    result.per_c.push_back({C, a.inertia, score});
  }
  result.c_star = result.per_c.front().C;
  double best = result.per_c.front().score;
  for (const auto& entry : result.per_c) {
    if (entry.score < best) {
      best = entry.score;
      result.c_star = entry.C;
    }
  }
  return result;
}

// ============================================================================
// Kernel objective and kernel regression
// ============================================================================

namespace detail {

inline void check_labels(std::size_t n, const std::vector<int>& labels) {
  if (labels.size() != n) throw ValidationError("labels and vectors differ in length");
  for (int l : labels)
    if (l < 0) throw ValidationError("negative cluster label");
}

}  // namespace detail

/// Sum over clusters of (between-cluster kernel mass) / |cluster|.
inline double kernel_objective(const std::vector<EmbeddingVector>& vectors,
                               const std::vector<int>& labels, const KernelSpec& kernel) {
  const auto points = detail::strip_model(vectors);
  detail::check_labels(points.size(), labels);
  const int C = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::size_t> sizes(C, 0);
  for (int l : labels) ++sizes[l];
  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    double cross = 0.0;
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (labels[j] == labels[i]) continue;
      cross += kernel_value(kernel, points[i], points[j]);
    }
    total += cross / static_cast<double>(sizes[labels[i]]);
  }
  return total;
}

/// Nadaraya-Watson predictor: (sum_j y_j K(q, x_j)) / (sum_j K(q, x_j)).
inline double kernel_regression_predict(
    const std::vector<std::pair<EmbeddingVector, double>>& demos, const EmbeddingVector& query,
    const KernelSpec& kernel) {
  if (demos.empty()) throw ZeroKernelMass("kernel regression needs at least one demo");
  double numerator = 0.0;
  double denominator = 0.0;
  for (const auto& [x, y] : demos) {
    const double k = kernel_value(kernel, query.values, x.values);
    numerator += y * k;
    denominator += k;
  }
  if (!(denominator > 0.0) || !std::isfinite(denominator))
    throw ZeroKernelMass("kernel mass at the query is zero or non-finite");
  return numerator / denominator;
}

/// For each demo i in cluster c: |within-cluster prediction - all-demo
/// prediction| at query x_i. Zero exactly when cross-cluster kernel mass
/// vanishes.
inline std::vector<double> restriction_error(
    const std::vector<std::pair<EmbeddingVector, double>>& demos, const std::vector<int>& labels,
    const KernelSpec& kernel) {
  detail::check_labels(demos.size(), labels);
  std::vector<double> errors(demos.size(), 0.0);
  for (std::size_t i = 0; i < demos.size(); ++i) {
    std::vector<std::pair<EmbeddingVector, double>> within;
    for (std::size_t j = 0; j < demos.size(); ++j)
      if (labels[j] == labels[i]) within.push_back(demos[j]);
    const double full = kernel_regression_predict(demos, demos[i].first, kernel);
    const double restricted = kernel_regression_predict(within, demos[i].first, kernel);
    errors[i] = std::abs(restricted - full);
  }
  return errors;
}

}  // namespace mop
