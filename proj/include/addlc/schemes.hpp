#pragma once

// The three elementary compressed representations and their projections:
//
//   Quantization     scalar codebook + per-weight assignment
//   SparseCorrection budgeted list of (index, value) corrections
//   LowRankFactors   W ~ U V^T with a fixed rank
//
// Each *_project function solves min_theta || residual - decompress(theta) ||^2
// over its own feasible set, exactly (pruning, fixed codebook, truncated SVD)
// or to a deterministic local optimum (adaptive codebook via Lloyd).
// Projections run in full double precision; reduced storage precision is
// applied only by the metrics/container layer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "addlc/core.hpp"
#include "addlc/kmeans.hpp"
#include "addlc/svd.hpp"

namespace addlc {

// ------------------------------------------------------------------ types ---

struct Quantization {
  std::vector<double> codebook;            // K entries, K >= 1
  std::vector<std::uint32_t> assignments;  // one codebook index per weight
  bool adaptive = true;                    // false: codebook is caller-fixed, never refit
};

struct SparseCorrection {
  // Sorted by index, strictly increasing; values never exactly zero.
  std::vector<std::pair<std::size_t, double>> entries;
  std::size_t budget = 0;  // the kappa this correction was built under
};

struct LowRankFactors {
  Matrix u;              // m x r
  Matrix v;              // n x r; reconstruction is U V^T (m x n)
  std::size_t rank = 0;  // r == 0 is the legal empty part (decompresses to zero)
};

// ------------------------------------------------------------- projections --

// kappa largest-magnitude residuals, ties to the lowest index. Exact
// projection onto the kappa-sparse set. Residuals that are exactly zero are
// never stored (they contribute nothing), so the entry list may be shorter
// than kappa.
inline SparseCorrection prune_project(std::span<const double> residual, std::size_t kappa) {
  if (kappa > residual.size())
    throw ConfigError("prune: budget exceeds dimension (" + std::to_string(kappa) + " > " +
                      std::to_string(residual.size()) + ")");
  std::vector<std::size_t> idx(residual.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // magnitude descending, index ascending on ties
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(residual[a]) > std::abs(residual[b]);
  });
  idx.resize(kappa);
  std::sort(idx.begin(), idx.end());

  SparseCorrection out;
  out.budget = kappa;
  out.entries.reserve(kappa);
  for (std::size_t i : idx)
    if (residual[i] != 0.0) out.entries.emplace_back(i, residual[i]);
  return out;
}

// Adaptive scalar quantization: 1-D k-means. Small inputs (and inputs with
// at most K distinct values) are solved exactly; the distinct-value case pads
// the codebook by repeating its last (largest) entry up to size K. Larger
// inputs run Lloyd from the quantile seed.
inline Quantization quant_adaptive_project(std::span<const double> values, std::size_t k) {
  if (values.empty()) throw ConfigError("quantize: empty input");
  if (k == 0) throw ConfigError("quantize: codebook size must be >= 1");
  if (values.size() < k)
    throw ConfigError("quantize: codebook size " + std::to_string(k) + " exceeds sample count " +
                      std::to_string(values.size()));

  std::vector<double> distinct(values.begin(), values.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  Quantization out;
  out.adaptive = true;
  if (distinct.size() <= k) {
    out.codebook = distinct;
    out.codebook.resize(k, distinct.back());  // deterministic padding
    out.assignments.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto it = std::lower_bound(distinct.begin(), distinct.end(), values[i]);
      out.assignments[i] = static_cast<std::uint32_t>(it - distinct.begin());
    }
    return out;
  }

  LloydResult r = values.size() <= kExactKmeansLimit
                      ? kmeans_1d_exact(values, k)
                      : lloyd_1d(values, quantile_codebook(values, k));
  out.codebook = std::move(r.codebook);
  out.assignments = std::move(r.assignments);
  return out;
}

// Nearest fixed codebook entry per weight, ties to the lower codebook index.
inline Quantization quant_fixed_project(std::span<const double> values,
                                        std::span<const double> codebook) {
  if (values.empty()) throw ConfigError("quantize: empty input");
  if (codebook.empty()) throw ConfigError("quantize: empty fixed codebook");
  Quantization out;
  out.adaptive = false;
  out.codebook.assign(codebook.begin(), codebook.end());
  out.assignments.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out.assignments[i] = detail::nearest_entry(values[i], codebook);
  return out;
}

// Rank-r truncated SVD of an m x n residual matrix. The singular values are
// folded into U, so V keeps orthonormal columns.
inline LowRankFactors lowrank_project(const Matrix& residual, std::size_t r) {
  const std::size_t max_rank = std::min(residual.rows, residual.cols);
  if (r < 1 || r > max_rank)
    throw ConfigError("low-rank: rank " + std::to_string(r) + " out of range [1, " +
                      std::to_string(max_rank) + "]");
  SvdResult svd = jacobi_svd(residual);
  LowRankFactors out;
  out.rank = r;
  out.u = Matrix(residual.rows, r);
  out.v = Matrix(residual.cols, r);
  for (std::size_t j = 0; j < r; ++j) {
    for (std::size_t i = 0; i < residual.rows; ++i)
      out.u(i, j) = svd.u(i, j) * svd.singular_values[j];
    for (std::size_t i = 0; i < residual.cols; ++i) out.v(i, j) = svd.v(i, j);
  }
  return out;
}

// -------------------------------------------------------------- decompress --

inline Vec decompress(const Quantization& q) {
  Vec out(q.assignments.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint32_t a = q.assignments[i];
    if (a >= q.codebook.size()) throw ConfigError("quantize: assignment index out of range");
    out[i] = q.codebook[a];
  }
  return out;
}

inline Vec decompress(const SparseCorrection& s, std::size_t length) {
  Vec out(length, 0.0);
  for (const auto& [i, v] : s.entries) {
    if (i >= length) throw ConfigError("sparse correction: index out of range");
    out[i] = v;
  }
  return out;
}

inline Matrix decompress(const LowRankFactors& f, std::size_t rows, std::size_t cols) {
  if (f.rank == 0) return Matrix(rows, cols);
  if (f.u.rows != rows || f.v.rows != cols || f.u.cols != f.rank || f.v.cols != f.rank)
    throw ConfigError("low-rank: factor shape mismatch");
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < f.rank; ++k) s += f.u(i, k) * f.v(j, k);
      out(i, j) = s;
    }
  return out;
}

// Squared reconstruction error of a part against the values it was fit to;
// handy for invariants and for reporting.
inline double quant_error(std::span<const double> values, const Quantization& q) {
  return detail::assignment_error(values, q.codebook, q.assignments);
}

}  // namespace addlc
