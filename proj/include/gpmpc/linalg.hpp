#pragma once

#include <span>

#include "gpmpc/matrix.hpp"

namespace gpmpc {

/// Lower-triangular Cholesky factor L with L * L^T = A.
///
/// A must be square and symmetric (relative tolerance 1e-10). Throws
/// NotPositiveDefinite when a squared pivot falls to or below
/// 1e-15 * max(diag A).
Matrix cholesky(const Matrix& a);

struct JitteredCholesky {
  Matrix factor;
  double jitter = 0.0;  ///< diagonal shift that made the factorization succeed
};

/// Cholesky with the covariance jitter policy: on failure, retry with
/// 1e-10 * mean(diag) added to the diagonal, escalating x10 up to three times.
JitteredCholesky cholesky_with_jitter(const Matrix& a);

/// Solves L y = b in place for lower-triangular L.
void forward_substitute(const Matrix& lower, std::span<double> b);
/// Solves L^T x = y in place for lower-triangular L.
void backward_substitute_transposed(const Matrix& lower, std::span<double> y);

/// Solves A X = B for positive definite A (no jitter).
Matrix solve_psd(const Matrix& a, const Matrix& b);
Vector solve_psd(const Matrix& a, std::span<const double> b);

/// (L L^T)^{-1} from a Cholesky factor, symmetrized.
Matrix inverse_from_cholesky(const Matrix& lower);

/// log det(L L^T) = 2 * sum log L_ii.
double log_det_from_cholesky(const Matrix& lower);

}  // namespace gpmpc
