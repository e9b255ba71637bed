#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gpmpc/matrix.hpp"
#include "gpmpc/rng.hpp"

namespace gpmpc {

/// SE-kernel hyperparameters, stored in log space.
struct Hyperparameters {
  double log_zeta = 0.0;    ///< log covariance magnitude
  Vector log_lambda;        ///< log length-scale per input dimension
  double log_sigma_nu = 0.0;  ///< log measurement-noise standard deviation

  std::size_t input_dim() const noexcept { return log_lambda.size(); }
  double zeta_sq() const;
  double noise_var() const;

  /// [log_zeta, log_lambda..., log_sigma_nu]
  Vector to_vector() const;
  static Hyperparameters from_vector(std::span<const double> v);

  bool operator==(const Hyperparameters&) const = default;
};

/// zeta^2 exp(-1/2 (z - z')^T Lambda^{-2} (z - z')). Throws DimensionMismatch.
double se_kernel(std::span<const double> z, std::span<const double> z_prime, const Hyperparameters& psi);

/// Sigma_Y with sigma_nu^2 on the diagonal of rows whose noise flag is set.
Matrix covariance_matrix(const Matrix& z, const Hyperparameters& psi, std::span<const std::uint8_t> noise_flags);

/// 1/2 log det Sigma_Y + 1/2 Y^T Sigma_Y^{-1} Y with every row noisy.
/// Requires N >= 2; throws NotPositiveDefinite once jitter escalation fails.
double neg_log_marginal_likelihood(const Hyperparameters& psi, const Matrix& z, std::span<const double> y);

struct FitOptions {
  double log_bound = 7.0;  ///< every log-parameter is clipped to [-bound, bound]
  int max_evaluations = 3000;
  int polish_rounds = 3;
  double perturbation = 1.0;  ///< std of the log-space restart perturbation
};

struct FitReport {
  Hyperparameters psi;
  double nll = 0.0;
  double heuristic_nll = 0.0;  ///< objective at the unperturbed heuristic start
  /// Infinity norm of the central-difference gradient, with components that
  /// push against an active bound removed.
  double projected_gradient = 0.0;
  bool hit_iteration_cap = false;
  int successful_starts = 0;
  int evaluations = 0;
};

/// Maximum-likelihood hyperparameters by multi-start Nelder-Mead in log
/// space. Start 0 is the heuristic (length-scales at the per-dimension data
/// span, zeta at the target std, sigma_nu at 0.1 target std); further starts
/// perturb it with draws from `rng`. Throws AllRestartsFailed.
FitReport fit_hyperparameters(const Matrix& z, std::span<const double> y, int restarts, RngStream& rng,
                              const FitOptions& options = {});

struct Posterior {
  double mean = 0.0;
  double variance = 0.0;
};

/// Bordered inverse [[A, k], [k^T, kappa]]^{-1} from A^{-1} via the Schur
/// complement s = kappa - k^T A^{-1} k. Throws SingularUpdate when s <= 1e-12.
Matrix block_inverse_update(const Matrix& inv_cov, std::span<const double> k_new, double kappa);

/// Zero-mean single-output GP with an explicit inverse covariance.
///
/// Immutable after construction: `condition` returns a new model with the
/// inverse extended by the bordered update and the hyperparameters untouched.
/// A Cholesky factor of the same covariance is extended alongside; posterior
/// variances, alpha and Schur complements are computed from it because the
/// explicit inverse loses too many digits when sigma_nu^2 << zeta^2.
class GPModel {
 public:
  /// Batch build from data; the inverse comes from a (jittered) Cholesky.
  GPModel(Matrix z, Vector y, Hyperparameters psi, std::vector<std::uint8_t> noise_flags);
  /// Batch build with every row noisy.
  GPModel(Matrix z, Vector y, Hyperparameters psi);

  std::size_t size() const noexcept { return y_.size(); }
  std::size_t input_dim() const noexcept { return psi_.input_dim(); }
  const Matrix& inputs() const noexcept { return z_; }
  const Vector& targets() const noexcept { return y_; }
  const Hyperparameters& hyperparameters() const noexcept { return psi_; }
  const Matrix& inv_cov() const noexcept { return inv_cov_; }
  /// Lower Cholesky factor of the (jittered) training covariance.
  const Matrix& cholesky_factor() const noexcept { return chol_; }
  const Vector& alpha() const noexcept { return alpha_; }
  const std::vector<std::uint8_t>& noise_flags() const noexcept { return noise_flags_; }
  double jitter() const noexcept { return jitter_; }

  /// [k(z, z_1), ..., k(z, z_N)]
  Vector kernel_vector(std::span<const double> z) const;

  Posterior posterior(std::span<const double> z) const;
  double mean(std::span<const double> z) const;
  /// Posterior mean, writing d mean / d z into `grad`.
  double mean_with_gradient(std::span<const double> z, std::span<double> grad) const;
  /// Posterior variance (clamped to [0, zeta^2]), writing its gradient into `grad`.
  double variance_with_gradient(std::span<const double> z, std::span<double> grad) const;

  /// Adds (z_new, y_new) with or without sigma_nu^2 on the new diagonal entry.
  GPModel condition(std::span<const double> z_new, double y_new, bool noiseless) const;

 private:
  GPModel() = default;
  void check_input(std::span<const double> z) const;
  void solve_alpha();
  void refresh_cache();

  Matrix z_;
  Vector y_;
  Hyperparameters psi_;
  std::vector<std::uint8_t> noise_flags_;
  Matrix inv_cov_;
  Matrix chol_;
  Matrix cov_;
  Vector alpha_;
  double jitter_ = 0.0;

  // Derived: inputs divided by length-scales, and zeta^2 * alpha.
  Matrix z_scaled_;
  Vector inv_lambda_;
  Vector weights_;
};

}  // namespace gpmpc
