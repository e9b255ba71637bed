#include "gpmpc/stats.hpp"

#include <algorithm>
#include <cmath>

#include "gpmpc/errors.hpp"
#include "gpmpc/linalg.hpp"

namespace gpmpc {

Vector sample_gaussian(std::span<const double> mean, const Covariance& cov, RngStream& rng) {
  const std::size_t n = mean.size();
  Vector z(n);
  for (auto& zi : z) zi = rng.normal();
  Vector x(mean.begin(), mean.end());

  if (const auto* d = std::get_if<DiagonalCovariance>(&cov)) {
    if (d->diag.size() != n) throw DimensionMismatch("sample_gaussian: covariance size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      if (d->diag[i] < 0.0) throw DomainError("sample_gaussian: negative variance");
      if (d->diag[i] > 0.0) x[i] += std::sqrt(d->diag[i]) * z[i];
    }
    return x;
  }

  const auto& full = std::get<Matrix>(cov);
  if (full.rows() != n) throw DimensionMismatch("sample_gaussian: covariance size mismatch");
  const Matrix l = cholesky(full);
  for (std::size_t i = 0; i < n; ++i) {
    const auto li = l.row(i);
    for (std::size_t k = 0; k <= i; ++k) x[i] += li[k] * z[k];
  }
  return x;
}

double ecdf_quantile(std::span<const double> samples, double p) {
  if (samples.empty()) throw EmptySample("ecdf_quantile: no samples");
  if (!(p > 0.0 && p <= 1.0)) throw DomainError("ecdf_quantile: p must lie in (0, 1]");
  const std::size_t n = samples.size();
  const double nd = static_cast<double>(n);
  // Smallest count k with k / n >= p.
  std::size_t k = static_cast<std::size_t>(std::ceil(p * nd));
  k = std::clamp<std::size_t>(k, 1, n);
  while (k > 1 && static_cast<double>(k - 1) / nd >= p) --k;
  while (k < n && static_cast<double>(k) / nd < p) ++k;

  std::vector<double> sorted(samples.begin(), samples.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
  return sorted[k - 1];
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace gpmpc
