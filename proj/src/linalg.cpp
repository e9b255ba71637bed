#include "gpmpc/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gpmpc/errors.hpp"

namespace gpmpc {

namespace {

constexpr double kPivotFloorRel = 1e-15;
constexpr double kJitterBase = 1e-10;
constexpr int kJitterEscalations = 3;

void check_covariance_shape(const Matrix& a) {
  if (!a.is_square()) throw DimensionMismatch("cholesky: matrix is not square");
  if (!is_symmetric(a, 1e-10)) throw DomainError("cholesky: matrix is not symmetric");
}

// Factorizes without shape checks; returns false on a failed pivot.
bool factorize(const Matrix& a, double shift, Matrix& l, std::size_t& bad_index) {
  const std::size_t n = a.rows();
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, a(i, i) + shift);
  const double floor = kPivotFloorRel * std::max(max_diag, 1e-300);

  l = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto lj = l.row(j);
    double d = a(j, j) + shift;
    for (std::size_t k = 0; k < j; ++k) d -= lj[k] * lj[k];
    if (!(d > floor)) {
      bad_index = j;
      return false;
    }
    const double ljj = std::sqrt(d);
    lj[j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      const auto li = l.row(i);
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
      li[j] = s / ljj;
    }
  }
  return true;
}

}  // namespace

Matrix cholesky(const Matrix& a) {
  check_covariance_shape(a);
  Matrix l;
  std::size_t bad = 0;
  if (!factorize(a, 0.0, l, bad))
    throw NotPositiveDefinite("cholesky: non-positive pivot at index " + std::to_string(bad));
  return l;
}

JitteredCholesky cholesky_with_jitter(const Matrix& a) {
  check_covariance_shape(a);
  Matrix l;
  std::size_t bad = 0;
  if (factorize(a, 0.0, l, bad)) return {std::move(l), 0.0};

  double mean_diag = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) mean_diag += a(i, i);
  mean_diag /= static_cast<double>(std::max<std::size_t>(a.rows(), 1));
  double jitter = kJitterBase * std::max(mean_diag, 1e-300);
  for (int attempt = 0; attempt <= kJitterEscalations; ++attempt, jitter *= 10.0) {
    if (factorize(a, jitter, l, bad)) return {std::move(l), jitter};
  }
  throw NotPositiveDefinite("cholesky: still indefinite after jitter escalation (pivot " +
                            std::to_string(bad) + ")");
}

void forward_substitute(const Matrix& lower, std::span<double> b) {
  const std::size_t n = lower.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const auto li = lower.row(i);
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= li[k] * b[k];
    b[i] = s / li[i];
  }
}

void backward_substitute_transposed(const Matrix& lower, std::span<double> y) {
  const std::size_t n = lower.rows();
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= lower(k, ii) * y[k];
    y[ii] = s / lower(ii, ii);
  }
}

Matrix solve_psd(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw DimensionMismatch("solve_psd: right-hand side has wrong row count");
  const Matrix l = cholesky(a);
  Matrix x(b.rows(), b.cols());
  Vector column(b.rows());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    for (std::size_t i = 0; i < b.rows(); ++i) column[i] = b(i, j);
    forward_substitute(l, column);
    backward_substitute_transposed(l, column);
    for (std::size_t i = 0; i < b.rows(); ++i) x(i, j) = column[i];
  }
  return x;
}

Vector solve_psd(const Matrix& a, std::span<const double> b) {
  if (a.rows() != b.size()) throw DimensionMismatch("solve_psd: right-hand side has wrong length");
  const Matrix l = cholesky(a);
  Vector x(b.begin(), b.end());
  forward_substitute(l, x);
  backward_substitute_transposed(l, x);
  return x;
}

Matrix inverse_from_cholesky(const Matrix& lower) {
  const std::size_t n = lower.rows();
  // Invert L column by column, then form L^{-T} L^{-1}.
  Matrix linv(n, n);
  Vector e(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    for (std::size_t i = j; i < n; ++i) {
      const auto li = lower.row(i);
      double s = e[i];
      for (std::size_t k = j; k < i; ++k) s -= li[k] * e[k];
      e[i] = s / li[i];
    }
    for (std::size_t i = j; i < n; ++i) linv(i, j) = e[i];
  }
  Matrix inv(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = i; k < n; ++k) s += linv(k, i) * linv(k, j);
      inv(i, j) = s;
      inv(j, i) = s;
    }
  }
  return inv;
}

double log_det_from_cholesky(const Matrix& lower) {
  double s = 0.0;
  for (std::size_t i = 0; i < lower.rows(); ++i) s += std::log(lower(i, i));
  return 2.0 * s;
}

}  // namespace gpmpc
