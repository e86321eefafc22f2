#pragma once

// Independent brute-force oracles used to freeze expected values. Everything
// here recomputes results from first principles, deliberately avoiding the
// library code paths under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace oracles {

using Point = std::vector<double>;

inline double squared_dist(const Point& a, const Point& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

inline Point mean_of(const std::vector<Point>& points, const std::vector<int>& labels, int c) {
  Point m(points.front().size(), 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (labels[i] != c) continue;
    for (std::size_t d = 0; d < m.size(); ++d) m[d] += points[i][d];
    ++count;
  }
  for (double& x : m) x /= static_cast<double>(count);
  return m;
}

inline double inertia_of(const std::vector<Point>& points, const std::vector<int>& labels) {
  const int C = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<Point> centroids;
  for (int c = 0; c < C; ++c) centroids.push_back(mean_of(points, labels, c));
  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i)
    total += squared_dist(points[i], centroids[labels[i]]);
  return total;
}

/// Minimum 2-cluster inertia over all non-trivial bipartitions (2^(n-1) - 1
/// of them), by exhaustive enumeration.
inline double min_bipartition_inertia(const std::vector<Point>& points) {
  const std::size_t n = points.size();
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 1; mask < (1u << (n - 1)); ++mask) {
    std::vector<int> labels(n, 0);
    for (std::size_t i = 0; i + 1 < n; ++i)
      if (mask & (1u << i)) labels[i + 1] = 1;
    best = std::min(best, inertia_of(points, labels));
  }
  return best;
}

/// All non-trivial bipartition labelings of n points (point 0 fixed in
/// cluster 0, so each unordered split appears once).
inline std::vector<std::vector<int>> all_bipartitions(std::size_t n) {
  std::vector<std::vector<int>> out;
  for (std::uint32_t mask = 1; mask < (1u << (n - 1)); ++mask) {
    std::vector<int> labels(n, 0);
    for (std::size_t i = 0; i + 1 < n; ++i)
      if (mask & (1u << i)) labels[i + 1] = 1;
    out.push_back(std::move(labels));
  }
  return out;
}

/// Direct double-loop of the between-cluster kernel objective.
template <typename KernelFn>
inline double kernel_objective_direct(const std::vector<Point>& points,
                                      const std::vector<int>& labels, KernelFn kernel) {
  const int C = *std::max_element(labels.begin(), labels.end()) + 1;
  double total = 0.0;
  for (int c = 0; c < C; ++c) {
    double cross = 0.0;
    std::size_t size = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (labels[i] != c) continue;
      ++size;
      for (std::size_t j = 0; j < points.size(); ++j)
        if (labels[j] != c) cross += kernel(points[i], points[j]);
    }
    total += cross / static_cast<double>(size);
  }
  return total;
}

/// Independent Nadaraya-Watson: plain weighted mean.
template <typename KernelFn>
inline double weighted_mean(const std::vector<Point>& xs, const std::vector<double>& ys,
                            const Point& query, KernelFn kernel) {
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const double k = kernel(query, xs[j]);
    num += ys[j] * k;
    den += k;
  }
  return num / den;
}

/// Exhaustive LCS: enumerate every subsequence of the shorter sequence and
/// keep the longest that is a subsequence of the other.
inline std::size_t lcs_enumeration(const std::vector<int>& a, const std::vector<int>& b) {
  const std::vector<int>& s = a.size() <= b.size() ? a : b;
  const std::vector<int>& t = a.size() <= b.size() ? b : a;
  const std::size_t n = s.size();
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    std::vector<int> sub;
    for (std::size_t k = 0; k < n; ++k)
      if (mask & (1u << k)) sub.push_back(s[k]);
    if (sub.size() <= best) continue;
    std::size_t j = 0;
    bool ok = true;
    for (int c : sub) {
      while (j < t.size() && t[j] != c) ++j;
      if (j == t.size()) {
        ok = false;
        break;
      }
      ++j;
    }
    if (ok) best = sub.size();
  }
  return best;
}

/// Exhaustive nearest-centroid scan.
inline int nearest_scan(const Point& query, const std::vector<Point>& centroids) {
  int best = 0;
  double best_d = squared_dist(query, centroids[0]);
  for (std::size_t c = 1; c < centroids.size(); ++c) {
    const double d = squared_dist(query, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

/// Spearman rank correlation; average ranks for ties.
inline double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(xs);
  const auto ry = ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    cov += (rx[i] - mx) * (ry[i] - my);
    vx += (rx[i] - mx) * (rx[i] - mx);
    vy += (ry[i] - my) * (ry[i] - my);
  }
  return cov / std::sqrt(vx * vy);
}

}  // namespace oracles
