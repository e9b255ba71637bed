#include "gpmpc/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gpmpc/errors.hpp"
#include "gpmpc/linalg.hpp"
#include "gpmpc/nelder_mead.hpp"
#include "gpmpc/stats.hpp"

namespace gpmpc {

namespace {

constexpr double kSchurFloor = 1e-12;
constexpr double kVarianceTolerance = 1e-9;

double scaled_sq_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

}  // namespace

double Hyperparameters::zeta_sq() const { return std::exp(2.0 * log_zeta); }
double Hyperparameters::noise_var() const { return std::exp(2.0 * log_sigma_nu); }

Vector Hyperparameters::to_vector() const {
  Vector v;
  v.reserve(log_lambda.size() + 2);
  v.push_back(log_zeta);
  v.insert(v.end(), log_lambda.begin(), log_lambda.end());
  v.push_back(log_sigma_nu);
  return v;
}

Hyperparameters Hyperparameters::from_vector(std::span<const double> v) {
  if (v.size() < 3) throw DimensionMismatch("hyperparameter vector needs at least three entries");
  Hyperparameters p;
  p.log_zeta = v.front();
  p.log_lambda.assign(v.begin() + 1, v.end() - 1);
  p.log_sigma_nu = v.back();
  return p;
}

double se_kernel(std::span<const double> z, std::span<const double> z_prime, const Hyperparameters& psi) {
  if (z.size() != z_prime.size() || z.size() != psi.input_dim())
    throw DimensionMismatch("se_kernel: input dimensions disagree");
  double q = 0.0;
  for (std::size_t d = 0; d < z.size(); ++d) {
    const double diff = (z[d] - z_prime[d]) * std::exp(-psi.log_lambda[d]);
    q += diff * diff;
  }
  return psi.zeta_sq() * std::exp(-0.5 * q);
}

Matrix covariance_matrix(const Matrix& z, const Hyperparameters& psi, std::span<const std::uint8_t> noise_flags) {
  const std::size_t n = z.rows();
  if (noise_flags.size() != n) throw DimensionMismatch("covariance_matrix: one noise flag per row required");
  if (z.cols() != psi.input_dim()) throw DimensionMismatch("covariance_matrix: input dimension mismatch");
  Matrix scaled(n, z.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < z.cols(); ++d) scaled(i, d) = z(i, d) * std::exp(-psi.log_lambda[d]);
  const double zeta_sq = psi.zeta_sq();
  const double noise = psi.noise_var();
  Matrix k(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    k(i, i) = zeta_sq + (noise_flags[i] ? noise : 0.0);
    for (std::size_t j = 0; j < i; ++j) {
      const double v = zeta_sq * std::exp(-0.5 * scaled_sq_distance(scaled.row(i), scaled.row(j)));
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

double neg_log_marginal_likelihood(const Hyperparameters& psi, const Matrix& z, std::span<const double> y) {
  if (z.rows() < 2) throw DomainError("neg_log_marginal_likelihood: need at least two observations");
  if (y.size() != z.rows()) throw DimensionMismatch("neg_log_marginal_likelihood: Y length mismatch");
  const std::vector<std::uint8_t> flags(z.rows(), 1);
  const JitteredCholesky chol = cholesky_with_jitter(covariance_matrix(z, psi, flags));
  Vector w(y.begin(), y.end());
  forward_substitute(chol.factor, w);
  return 0.5 * log_det_from_cholesky(chol.factor) + 0.5 * dot(w, w);
}

FitReport fit_hyperparameters(const Matrix& z, std::span<const double> y, int restarts, RngStream& rng,
                              const FitOptions& options) {
  if (restarts < 1) throw DomainError("fit_hyperparameters: restarts must be >= 1");
  if (y.size() != z.rows()) throw DimensionMismatch("fit_hyperparameters: Y length mismatch");
  const std::size_t nz = z.cols();
  const std::size_t dim = nz + 2;
  const double bound = options.log_bound;

  auto objective = [&](std::span<const double> v) {
    try {
      return neg_log_marginal_likelihood(Hyperparameters::from_vector(v), z, y);
    } catch (const NotPositiveDefinite&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  const double y_std = stddev(y);
  const double target_scale = y_std > 0.0 ? y_std : 1.0;
  Vector heuristic(dim);
  heuristic[0] = std::log(target_scale);
  for (std::size_t d = 0; d < nz; ++d) {
    const Vector col = z.col(d);
    const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
    const double span = *hi - *lo;
    heuristic[1 + d] = span > 0.0 ? std::log(span) : 0.0;
  }
  heuristic[dim - 1] = std::log(0.1 * target_scale);
  for (auto& h : heuristic) h = std::clamp(h, -bound, bound);

  NelderMeadOptions nm;
  nm.max_evaluations = options.max_evaluations;
  nm.lower.assign(dim, -bound);
  nm.upper.assign(dim, bound);

  FitReport report;
  report.heuristic_nll = objective(heuristic);
  double best_f = std::numeric_limits<double>::infinity();
  Vector best_x;
  bool best_capped = false;

  for (int r = 0; r < restarts; ++r) {
    Vector start = heuristic;
    if (r > 0) {
      for (auto& s : start) s = std::clamp(s + options.perturbation * rng.normal(), -bound, bound);
    }
    nm.initial_step = 0.5;
    NelderMeadResult res = nelder_mead(objective, start, nm);
    report.evaluations += res.evaluations;
    bool capped = !res.converged;
    // Restarting the simplex at the incumbent guards against premature collapse.
    for (int round = 0; round < options.polish_rounds && std::isfinite(res.f); ++round) {
      nm.initial_step = 0.05;
      NelderMeadResult again = nelder_mead(objective, res.x, nm);
      report.evaluations += again.evaluations;
      const bool improved = again.f < res.f - 1e-12 * (1.0 + std::abs(res.f));
      if (again.f <= res.f) {
        capped = !again.converged;
        res = std::move(again);
      }
      if (!improved) break;
    }
    if (!std::isfinite(res.f)) continue;
    ++report.successful_starts;
    if (res.f < best_f) {
      best_f = res.f;
      best_x = res.x;
      best_capped = capped;
    }
  }
  if (report.successful_starts == 0) throw AllRestartsFailed("fit_hyperparameters: every start diverged");

  report.psi = Hyperparameters::from_vector(best_x);
  report.nll = best_f;
  report.hit_iteration_cap = best_capped;

  const double h = 1e-5;
  double gmax = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    Vector xp = best_x, xm = best_x;
    xp[i] = std::min(xp[i] + h, bound);
    xm[i] = std::max(xm[i] - h, -bound);
    const double g = (objective(xp) - objective(xm)) / (xp[i] - xm[i]);
    const bool at_upper = best_x[i] >= bound - 1e-12 && g < 0.0;
    const bool at_lower = best_x[i] <= -bound + 1e-12 && g > 0.0;
    if (!at_upper && !at_lower) gmax = std::max(gmax, std::abs(g));
  }
  report.projected_gradient = gmax;
  return report;
}

namespace {

// Bordered block inverse from v = A^{-1} k and the Schur complement s.
Matrix bordered_inverse(const Matrix& inv_cov, std::span<const double> v, double schur) {
  const std::size_t n = inv_cov.rows();
  const double c22 = 1.0 / schur;
  Matrix out(n + 1, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double c12 = -v[i] * c22;
    out(i, n) = c12;
    out(n, i) = c12;
    for (std::size_t j = 0; j <= i; ++j) {
      const double c11 = inv_cov(i, j) + v[i] * v[j] * c22;
      out(i, j) = c11;
      out(j, i) = c11;
    }
  }
  out(n, n) = c22;
  return out;
}

void check_schur(double schur) {
  if (!(schur > kSchurFloor))
    throw SingularUpdate("block_inverse_update: Schur complement " + std::to_string(schur) + " <= 1e-12");
}

}  // namespace

Matrix block_inverse_update(const Matrix& inv_cov, std::span<const double> k_new, double kappa) {
  const std::size_t n = inv_cov.rows();
  if (!inv_cov.is_square() || k_new.size() != n) throw DimensionMismatch("block_inverse_update: shape mismatch");
  const Vector v = matvec(inv_cov, k_new);
  const double schur = kappa - dot(k_new, v);
  check_schur(schur);
  return bordered_inverse(inv_cov, v, schur);
}

GPModel::GPModel(Matrix z, Vector y, Hyperparameters psi, std::vector<std::uint8_t> noise_flags)
    : z_(std::move(z)), y_(std::move(y)), psi_(std::move(psi)), noise_flags_(std::move(noise_flags)) {
  if (y_.size() != z_.rows()) throw DimensionMismatch("GPModel: Y length mismatch");
  if (noise_flags_.size() != z_.rows()) throw DimensionMismatch("GPModel: noise flag count mismatch");
  if (z_.cols() != psi_.input_dim()) throw DimensionMismatch("GPModel: hyperparameter dimension mismatch");
  if (z_.rows() > 0) {
    cov_ = covariance_matrix(z_, psi_, noise_flags_);
    JitteredCholesky chol = cholesky_with_jitter(cov_);
    inv_cov_ = inverse_from_cholesky(chol.factor);
    chol_ = std::move(chol.factor);
    jitter_ = chol.jitter;
    for (std::size_t i = 0; i < cov_.rows(); ++i) cov_(i, i) += jitter_;
  }
  solve_alpha();
  refresh_cache();
}

GPModel::GPModel(Matrix z, Vector y, Hyperparameters psi)
    : GPModel(z, y, std::move(psi), std::vector<std::uint8_t>(y.size(), 1)) {}

void GPModel::solve_alpha() {
  const std::size_t n = size();
  alpha_ = y_;
  forward_substitute(chol_, alpha_);
  backward_substitute_transposed(chol_, alpha_);
  // One step of iterative refinement against the stored covariance.
  Vector r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = y_[i] - dot(cov_.row(i), alpha_);
  forward_substitute(chol_, r);
  backward_substitute_transposed(chol_, r);
  for (std::size_t i = 0; i < n; ++i) alpha_[i] += r[i];
}

void GPModel::refresh_cache() {
  const std::size_t nz = psi_.input_dim();
  inv_lambda_.resize(nz);
  for (std::size_t d = 0; d < nz; ++d) inv_lambda_[d] = std::exp(-psi_.log_lambda[d]);
  z_scaled_ = Matrix(z_.rows(), nz);
  for (std::size_t i = 0; i < z_.rows(); ++i)
    for (std::size_t d = 0; d < nz; ++d) z_scaled_(i, d) = z_(i, d) * inv_lambda_[d];
  const double zeta_sq = psi_.zeta_sq();
  weights_.resize(alpha_.size());
  for (std::size_t i = 0; i < alpha_.size(); ++i) weights_[i] = zeta_sq * alpha_[i];
}

void GPModel::check_input(std::span<const double> z) const {
  if (z.size() != input_dim())
    throw DimensionMismatch("GPModel: query has dimension " + std::to_string(z.size()) + ", expected " +
                            std::to_string(input_dim()));
}

Vector GPModel::kernel_vector(std::span<const double> z) const {
  check_input(z);
  const std::size_t nz = input_dim();
  double scaled[16];
  Vector zs_heap;
  double* zs = scaled;
  if (nz > 16) {
    zs_heap.resize(nz);
    zs = zs_heap.data();
  }
  for (std::size_t d = 0; d < nz; ++d) zs[d] = z[d] * inv_lambda_[d];
  const double zeta_sq = psi_.zeta_sq();
  Vector k(size());
  for (std::size_t i = 0; i < size(); ++i)
    k[i] = zeta_sq * std::exp(-0.5 * scaled_sq_distance({zs, nz}, z_scaled_.row(i)));
  return k;
}

double GPModel::mean(std::span<const double> z) const {
  check_input(z);
  const std::size_t nz = input_dim();
  double scaled[16];
  Vector zs_heap;
  double* zs = scaled;
  if (nz > 16) {
    zs_heap.resize(nz);
    zs = zs_heap.data();
  }
  for (std::size_t d = 0; d < nz; ++d) zs[d] = z[d] * inv_lambda_[d];
  double m = 0.0;
  for (std::size_t i = 0; i < size(); ++i)
    m += alpha_[i] * std::exp(-0.5 * scaled_sq_distance({zs, nz}, z_scaled_.row(i)));
  return psi_.zeta_sq() * m;
}

Posterior GPModel::posterior(std::span<const double> z) const {
  Vector k = kernel_vector(z);
  const double zeta_sq = psi_.zeta_sq();
  const double m = dot(k, alpha_);
  forward_substitute(chol_, k);
  const double var = std::clamp(zeta_sq - dot(k, k), 0.0, zeta_sq);
  return {m, var};
}

double GPModel::mean_with_gradient(std::span<const double> z, std::span<double> grad) const {
  check_input(z);
  const std::size_t nz = input_dim();
  if (grad.size() != nz) throw DimensionMismatch("mean_with_gradient: gradient buffer size");
  std::fill(grad.begin(), grad.end(), 0.0);
  double scaled[16];
  double diff[16];
  Vector heap;
  double* zs = scaled;
  double* df = diff;
  if (nz > 16) {
    heap.resize(2 * nz);
    zs = heap.data();
    df = heap.data() + nz;
  }
  for (std::size_t d = 0; d < nz; ++d) zs[d] = z[d] * inv_lambda_[d];
  double m = 0.0;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto zi = z_scaled_.row(i);
    double q = 0.0;
    for (std::size_t d = 0; d < nz; ++d) {
      df[d] = zs[d] - zi[d];
      q += df[d] * df[d];
    }
    const double term = weights_[i] * std::exp(-0.5 * q);
    m += term;
    for (std::size_t d = 0; d < nz; ++d) grad[d] -= term * df[d];
  }
  // d/dz of the scaled difference carries one more factor of 1/lambda.
  for (std::size_t d = 0; d < nz; ++d) grad[d] *= inv_lambda_[d];
  return m;
}

double GPModel::variance_with_gradient(std::span<const double> z, std::span<double> grad) const {
  check_input(z);
  const std::size_t nz = input_dim();
  if (grad.size() != nz) throw DimensionMismatch("variance_with_gradient: gradient buffer size");
  const Vector k = kernel_vector(z);
  Vector v = k;
  forward_substitute(chol_, v);
  const double zeta_sq = psi_.zeta_sq();
  const double raw = zeta_sq - dot(v, v);
  std::fill(grad.begin(), grad.end(), 0.0);
  if (raw <= 0.0 || raw >= zeta_sq) return std::clamp(raw, 0.0, zeta_sq);
  backward_substitute_transposed(chol_, v);
  // d sigma^2 / dz = -2 sum_i v_i dk_i/dz, dk_i/dz_d = -k_i (z_d - z_id) / lambda_d^2
  for (std::size_t i = 0; i < size(); ++i) {
    const double c = 2.0 * v[i] * k[i];
    const auto zi = z_scaled_.row(i);
    for (std::size_t d = 0; d < nz; ++d) grad[d] += c * (z[d] * inv_lambda_[d] - zi[d]) * inv_lambda_[d];
  }
  return raw;
}

GPModel GPModel::condition(std::span<const double> z_new, double y_new, bool noiseless) const {
  check_input(z_new);
  const std::size_t n = size();
  const Vector k = kernel_vector(z_new);
  const double kappa = psi_.zeta_sq() + (noiseless ? 0.0 : psi_.noise_var()) + jitter_;

  // The Schur complement equals kappa - |L^{-1} k|^2, which the factor
  // delivers without the cancellation of the explicit kappa - k^T A^{-1} k.
  Vector l = k;
  forward_substitute(chol_, l);
  const double schur = kappa - dot(l, l);
  check_schur(schur);
  Vector v = l;
  backward_substitute_transposed(chol_, v);

  GPModel out;
  out.inv_cov_ = bordered_inverse(inv_cov_, v, schur);
  out.chol_ = Matrix(n + 1, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = chol_.row(i);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(i + 1), out.chol_.row(i).begin());
  }
  std::copy(l.begin(), l.end(), out.chol_.row(n).begin());
  out.chol_(n, n) = std::sqrt(schur);
  out.cov_ = Matrix(n + 1, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = cov_.row(i);
    std::copy(src.begin(), src.end(), out.cov_.row(i).begin());
    out.cov_(i, n) = k[i];
    out.cov_(n, i) = k[i];
  }
  out.cov_(n, n) = kappa;
  out.z_ = z_.with_row(z_new);
  out.y_ = y_;
  out.y_.push_back(y_new);
  out.psi_ = psi_;
  out.noise_flags_ = noise_flags_;
  out.noise_flags_.push_back(noiseless ? 0 : 1);
  out.jitter_ = jitter_;
  out.solve_alpha();
  out.refresh_cache();
  return out;
}

}  // namespace gpmpc
