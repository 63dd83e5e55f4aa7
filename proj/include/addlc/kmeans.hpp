#pragma once

// One-dimensional k-means (Lloyd). This is the inner solver of adaptive
// quantization: scalar weights, K centroids, squared-error objective.
//
// Determinism rules, fixed here once and relied on everywhere:
//  * assignment ties go to the lower codebook index;
//  * empty clusters are repaired by re-seeding them with the point currently
//    farthest from its centroid (ties: lowest point index), only while the
//    objective is still positive;
//  * iteration stops at a fixed point of (assign, repair, mean-update) or at
//    a hard cap.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "addlc/core.hpp"

namespace addlc {

struct LloydResult {
  std::vector<double> codebook;
  std::vector<std::uint32_t> assignments;  // index into codebook, per value
  double squared_error = 0.0;
  std::size_t iterations = 0;
};

namespace detail {

inline std::uint32_t nearest_entry(double v, std::span<const double> codebook) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::uint32_t k = 0; k < codebook.size(); ++k) {
    const double d = std::abs(v - codebook[k]);
    if (d < best_d) {  // strict: ties keep the lower index
      best_d = d;
      best = k;
    }
  }
  return best;
}

inline double assignment_error(std::span<const double> values,
                               std::span<const double> codebook,
                               std::span<const std::uint32_t> assign) {
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - codebook[assign[i]];
    s += d * d;
  }
  return s;
}

}  // namespace detail

// Codebook seed: the (k+0.5)/K quantiles of the values, linearly
// interpolated. Midpoints of K equal-probability strata; no randomness.
inline std::vector<double> quantile_codebook(std::span<const double> values, std::size_t k) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> codebook(k);
  const std::size_t n = sorted.size();
  for (std::size_t j = 0; j < k; ++j) {
    const double pos = (static_cast<double>(j) + 0.5) / static_cast<double>(k) *
                       static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    codebook[j] = sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
  }
  return codebook;
}

// Lloyd iteration from a given starting codebook. `objective_trace`, when
// provided, receives the squared error after every assignment pass; the
// sequence is non-increasing (this is asserted by tests, not here).
inline LloydResult lloyd_1d(std::span<const double> values, std::vector<double> codebook,
                            std::vector<double>* objective_trace = nullptr) {
  if (values.empty()) throw ConfigError("k-means: empty input");
  if (codebook.empty()) throw ConfigError("k-means: empty codebook");

  const std::size_t k = codebook.size();
  std::vector<std::uint32_t> assign(values.size());
  constexpr std::size_t kMaxIterations = 1000;

  auto assign_all = [&] {
    for (std::size_t i = 0; i < values.size(); ++i)
      assign[i] = detail::nearest_entry(values[i], codebook);
  };

  // Re-seed empty clusters from the worst-served point. Each move strictly
  // decreases the objective, so this cannot cycle.
  auto repair_empty = [&] {
    std::vector<std::size_t> count(k, 0);
    for (std::uint32_t a : assign) ++count[a];
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] != 0) continue;
      std::size_t worst = values.size();
      double worst_d = 0.0;
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (count[assign[i]] <= 1) continue;  // do not orphan a singleton
        const double d = std::abs(values[i] - codebook[assign[i]]);
        if (d > worst_d) {
          worst_d = d;
          worst = i;
        }
      }
      if (worst == values.size() || worst_d == 0.0) continue;  // nothing to gain
      --count[assign[worst]];
      codebook[c] = values[worst];
      assign[worst] = static_cast<std::uint32_t>(c);
      ++count[c];
    }
  };

  assign_all();
  repair_empty();

  LloydResult out;
  std::size_t iter = 0;
  for (; iter < kMaxIterations; ++iter) {
    if (objective_trace)
      objective_trace->push_back(detail::assignment_error(values, codebook, assign));

    // centroid update (empty clusters keep their entry)
    std::vector<double> sum(k, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      sum[assign[i]] += values[i];
      ++count[assign[i]];
    }
    std::vector<double> next_codebook = codebook;
    for (std::size_t c = 0; c < k; ++c)
      if (count[c] > 0) next_codebook[c] = sum[c] / static_cast<double>(count[c]);

    std::vector<std::uint32_t> prev_assign = assign;
    std::vector<double> prev_codebook = codebook;
    codebook = std::move(next_codebook);
    assign_all();
    repair_empty();

    if (assign == prev_assign && codebook == prev_codebook) break;  // fixed point
  }

  out.codebook = std::move(codebook);
  out.assignments = std::move(assign);
  out.squared_error = detail::assignment_error(values, out.codebook, out.assignments);
  out.iterations = iter;
  return out;
}

// Inputs up to this size are clustered exactly (see kmeans_1d_exact); larger
// ones go through Lloyd, which only guarantees a local optimum.
inline constexpr std::size_t kExactKmeansLimit = 256;

// Exact 1-D K-clustering: optimal squared-error clusters are contiguous once
// the values are sorted, so dynamic programming over split positions finds
// the global optimum in O(K n^2). The result is also a Lloyd fixed point.
inline LloydResult kmeans_1d_exact(std::span<const double> values, std::size_t k) {
  const std::size_t n = values.size();
  if (n == 0) throw ConfigError("k-means: empty input");
  if (k == 0 || k > n) throw ConfigError("k-means: need 1 <= K <= sample count");

  std::vector<std::size_t> ord(n);
  std::iota(ord.begin(), ord.end(), std::size_t{0});
  std::stable_sort(ord.begin(), ord.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  // prefix sums of the sorted values
  std::vector<double> s1(n + 1, 0.0), s2(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = values[ord[i]];
    s1[i + 1] = s1[i] + v;
    s2[i + 1] = s2[i] + v * v;
  }
  // within-cluster squared error of sorted positions [a, b)
  auto cost = [&](std::size_t a, std::size_t b) {
    const double cnt = static_cast<double>(b - a);
    const double sum = s1[b] - s1[a];
    return std::max(0.0, (s2[b] - s2[a]) - sum * sum / cnt);
  };

  const double inf = std::numeric_limits<double>::infinity();
  // dp[c][j]: best error of the first j sorted values in c clusters
  std::vector<std::vector<double>> dp(k + 1, std::vector<double>(n + 1, inf));
  std::vector<std::vector<std::size_t>> from(k + 1, std::vector<std::size_t>(n + 1, 0));
  dp[0][0] = 0.0;
  for (std::size_t c = 1; c <= k; ++c)
    for (std::size_t j = c; j + (k - c) <= n; ++j)
      for (std::size_t i = c - 1; i < j; ++i) {
        const double e = dp[c - 1][i] + cost(i, j);
        if (e < dp[c][j]) {
          dp[c][j] = e;
          from[c][j] = i;
        }
      }

  // recover boundaries, then per-cluster means
  std::vector<std::size_t> bounds(k + 1);
  bounds[k] = n;
  for (std::size_t c = k; c > 0; --c) bounds[c - 1] = from[c][bounds[c]];

  LloydResult out;
  out.codebook.resize(k);
  out.assignments.resize(n);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t a = bounds[c], b = bounds[c + 1];
    out.codebook[c] = (s1[b] - s1[a]) / static_cast<double>(b - a);
    for (std::size_t i = a; i < b; ++i)
      out.assignments[ord[i]] = static_cast<std::uint32_t>(c);
  }
  out.squared_error = dp[k][n];
  out.iterations = 0;
  return out;
}

}  // namespace addlc
