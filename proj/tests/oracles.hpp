#pragma once

// Independent oracles for the test suite. Everything here recomputes results
// by a route the library does not use: exhaustive enumeration, an external
// SVD (Eigen), finite differences, or a from-scratch re-implementation of a
// published formula. Tests compare library output against these, never
// against the library itself.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "addlc/core.hpp"
#include "addlc/model.hpp"

namespace oracle {

using addlc::Vec;

// ------------------------------------------------ support sets (pruning) ----

// All κ-subsets of {0..n-1} via simple recursion.
inline void subsets_rec(std::size_t n, std::size_t k, std::size_t start,
                        std::vector<std::size_t>& cur,
                        std::vector<std::vector<std::size_t>>& out) {
  if (cur.size() == k) {
    out.push_back(cur);
    return;
  }
  for (std::size_t i = start; i + (k - cur.size()) <= n; ++i) {
    cur.push_back(i);
    subsets_rec(n, k, i + 1, cur, out);
    cur.pop_back();
  }
}

inline std::vector<std::vector<std::size_t>> subsets(std::size_t n, std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur;
  subsets_rec(n, k, 0, cur, out);
  return out;
}

// Minimal discarded squared error over every support of size exactly κ:
// keeping S costs sum of squares outside S.
inline double best_support_error(const Vec& v, std::size_t kappa) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : subsets(v.size(), kappa)) {
    double err = 0.0;
    std::size_t si = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (si < s.size() && s[si] == i) {
        ++si;
        continue;
      }
      err += v[i] * v[i];
    }
    best = std::min(best, err);
  }
  return best;
}

// ------------------------------------------------------- 1-D clustering -----

// Optimal K-cluster squared error by enumerating contiguous partitions of the
// sorted values (optimal 1-D clusters are contiguous). Recursion over split
// points; no Lloyd, no DP.
inline double kmeans_partition_rec(const Vec& sorted, std::size_t start, std::size_t k) {
  const std::size_t n = sorted.size() - start;
  auto sse = [&](std::size_t a, std::size_t b) {  // [a, b)
    double mean = 0.0;
    for (std::size_t i = a; i < b; ++i) mean += sorted[i];
    mean /= static_cast<double>(b - a);
    double e = 0.0;
    for (std::size_t i = a; i < b; ++i) e += (sorted[i] - mean) * (sorted[i] - mean);
    return e;
  };
  if (k == 1) return sse(start, sorted.size());
  double best = std::numeric_limits<double>::infinity();
  // first cluster = [start, cut), leave at least k-1 values for the rest
  for (std::size_t cut = start + 1; cut + (k - 1) <= sorted.size(); ++cut)
    best = std::min(best, sse(start, cut) + kmeans_partition_rec(sorted, cut, k - 1));
  return best;
}

inline double best_kmeans_error(Vec values, std::size_t k) {
  std::sort(values.begin(), values.end());
  if (k >= values.size()) return 0.0;
  return kmeans_partition_rec(values, 0, k);
}

// -------------------------------------- fixed codebook + corrections --------

// Global optimum of min over (assignments z, support S, |S| <= κ) of
// Σ (w_i − c_{z_i} − s_i)², by enumerating supports; on the support the term
// is cancelled exactly, off it each coordinate independently enumerates the
// codebook.
inline double best_qfixed_prune_error(const Vec& w, const Vec& codebook, std::size_t kappa) {
  Vec per_coord(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (double c : codebook) best = std::min(best, (w[i] - c) * (w[i] - c));
    per_coord[i] = best;
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k <= std::min(kappa, w.size()); ++k) {
    for (const auto& s : subsets(w.size(), k)) {
      double err = 0.0;
      std::size_t si = 0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (si < s.size() && s[si] == i) {
          ++si;
          continue;
        }
        err += per_coord[i];
      }
      best = std::min(best, err);
    }
  }
  return best;
}

// Global optimum of adaptive-K quantization + κ corrections: enumerate the
// support, cluster the complement optimally.
inline double best_qadaptive_prune_error(const Vec& w, std::size_t k, std::size_t kappa) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c <= std::min(kappa, w.size()); ++c) {
    for (const auto& s : subsets(w.size(), c)) {
      Vec rest;
      std::size_t si = 0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (si < s.size() && s[si] == i) {
          ++si;
          continue;
        }
        rest.push_back(w[i]);
      }
      // With fewer complement values than codebook entries the extra entries
      // are simply unused: cluster with min(K, |rest|) clusters (empty → 0).
      const double err =
          rest.empty() ? 0.0 : best_kmeans_error(rest, std::min(k, rest.size()));
      best = std::min(best, err);
    }
  }
  return best;
}

// ------------------------------------------------------------------ SVD -----

// Tail energy Σ_{i>r} σ_i² via Eigen's (two-sided Jacobi) SVD — a different
// algorithm and implementation from the library's one-sided Jacobi.
inline double svd_tail_energy(const addlc::Matrix& m, std::size_t r) {
  Eigen::MatrixXd a(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  double tail = 0.0;
  for (Eigen::Index i = static_cast<Eigen::Index>(r); i < sv.size(); ++i) tail += sv[i] * sv[i];
  return tail;
}

inline std::vector<double> svd_singular_values(const addlc::Matrix& m) {
  Eigen::MatrixXd a(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return {svd.singularValues().data(), svd.singularValues().data() + svd.singularValues().size()};
}

// ------------------------------------------------------ finite differences --

// Central-difference gradient of the model loss, one coordinate at a time.
inline Vec finite_diff_grad(const addlc::ModelSpec& spec, const addlc::WeightStore& w,
                            const addlc::Dataset& data, std::span<const std::size_t> batch,
                            double h = 1e-5) {
  addlc::WeightStore probe = w;
  Vec g(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double keep = probe.values[i];
    probe.values[i] = keep + h;
    const double up = addlc::loss_only(spec, probe, data, batch);
    probe.values[i] = keep - h;
    const double dn = addlc::loss_only(spec, probe, data, batch);
    probe.values[i] = keep;
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

// ------------------------------------------------------------- plain SGD ----

// From-scratch plain SGD (no momentum) with the library's shuffling, used to
// pin down that momentum = 0 degenerates to this exact trajectory.
template <class Problem>
Vec plain_sgd(const Problem& problem, Vec w, double lr, double lr_decay, std::size_t epochs,
              std::size_t batch_size, std::uint64_t seed) {
  addlc::Rng rng(seed);
  const std::size_t n = problem.sample_count();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Vec grad;
  for (std::size_t e = 0; e < epochs; ++e) {
    const double eta = lr * std::pow(lr_decay, static_cast<double>(e));
    rng.shuffle(order);
    for (std::size_t at = 0; at < n; at += batch_size) {
      const std::size_t len = std::min(batch_size, n - at);
      problem.loss_and_grad(w, {order.data() + at, len}, grad);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= eta * grad[i];
    }
  }
  return w;
}

// ------------------------------------------------- sparse stream replay -----

// Independent decoder for (delta, value) index streams, straight from the
// format definition: position starts at 0; a real pair advances by its delta
// and yields that position; a dummy pair advances by 2^p − 1.
struct ReplayedPair {
  std::uint32_t delta;
  bool dummy;
};
inline std::vector<std::size_t> replay_stream(const std::vector<ReplayedPair>& pairs,
                                              std::uint32_t p) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  bool first = true;
  for (const auto& pr : pairs) {
    if (pr.dummy) {
      pos += (std::size_t{1} << p) - 1;
      first = false;
      continue;
    }
    pos = first ? pr.delta : pos + pr.delta;
    first = false;
    out.push_back(pos);
  }
  return out;
}

}  // namespace oracle
