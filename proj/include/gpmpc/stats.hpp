#pragma once

#include <span>
#include <variant>

#include "gpmpc/matrix.hpp"
#include "gpmpc/rng.hpp"

namespace gpmpc {

/// Diagonal covariance, stored as its diagonal.
struct DiagonalCovariance {
  Vector diag;
};

/// Either a diagonal or a full (symmetric positive definite) covariance.
using Covariance = std::variant<DiagonalCovariance, Matrix>;

/// Draws x ~ N(mean, cov) using exactly mean.size() standard normals from
/// `rng`. Zero-variance diagonal entries return the mean exactly. A full
/// covariance is factorized without jitter and throws NotPositiveDefinite.
Vector sample_gaussian(std::span<const double> mean, const Covariance& cov, RngStream& rng);

/// Lower empirical quantile: the smallest sample value v such that the
/// fraction of samples <= v is at least p. Requires 0 < p <= 1; throws
/// EmptySample on empty input.
double ecdf_quantile(std::span<const double> samples, double p);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double stddev(std::span<const double> v);

}  // namespace gpmpc
