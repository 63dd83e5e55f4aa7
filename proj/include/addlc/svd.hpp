#pragma once

// Full SVD by one-sided Jacobi rotations. Chosen over bidiagonalization for
// its simplicity and very high relative accuracy; at the matrix sizes handled
// here (desk-scale layers, a few thousand rows at most on the long side) the
// O(mn^2) sweeps are not a concern.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "addlc/core.hpp"

namespace addlc {

struct SvdResult {
  Matrix u;                            // m x k, orthonormal columns (k = min(m, n))
  std::vector<double> singular_values; // descending
  Matrix v;                            // n x k, orthonormal columns; A = U diag(s) V^T
};

namespace detail {

// One-sided Jacobi on the columns of `b` (m x n, m >= n), accumulating the
// right rotations into `v` (n x n). On exit the columns of b are mutually
// orthogonal; their norms are the singular values.
inline void jacobi_orthogonalize(Matrix& b, Matrix& v) {
  const std::size_t m = b.rows, n = b.cols;
  constexpr double tol = 1e-15;
  constexpr std::size_t kMaxSweeps = 64;

  for (std::size_t sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double bp = b(i, p), bq = b(i, q);
          alpha += bp * bp;
          beta += bq * bq;
          gamma += bp * bq;
        }
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta) || gamma == 0.0) continue;

        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double bp = b(i, p), bq = b(i, q);
          b(i, p) = c * bp - s * bq;
          b(i, q) = s * bp + c * bq;
        }
        for (std::size_t i = 0; i < v.rows; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
        rotated = true;
      }
    }
    if (!rotated) break;
  }
}

}  // namespace detail

inline SvdResult jacobi_svd(const Matrix& a) {
  const bool transposed = a.rows < a.cols;  // work with the tall orientation
  Matrix b;
  if (transposed) {
    b = Matrix(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t j = 0; j < a.cols; ++j) b(j, i) = a(i, j);
  } else {
    b = a;
  }
  const std::size_t m = b.rows, n = b.cols;

  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;
  detail::jacobi_orthogonalize(b, v);

  // Column norms are the singular values; sort them descending (stable, so
  // equal values keep a deterministic order).
  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += b(i, j) * b(i, j);
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  Matrix u_sorted(m, n), v_sorted(n, n);
  std::vector<double> sigma_sorted(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    sigma_sorted[j] = sigma[src];
    const double inv = sigma[src] > 0.0 ? 1.0 / sigma[src] : 0.0;
    for (std::size_t i = 0; i < m; ++i) u_sorted(i, j) = b(i, src) * inv;
    for (std::size_t i = 0; i < n; ++i) v_sorted(i, j) = v(i, src);
  }

  SvdResult out;
  out.singular_values = std::move(sigma_sorted);
  if (transposed) {
    out.u = std::move(v_sorted);
    out.v = std::move(u_sorted);
  } else {
    out.u = std::move(u_sorted);
    out.v = std::move(v_sorted);
  }
  return out;
}

}  // namespace addlc
