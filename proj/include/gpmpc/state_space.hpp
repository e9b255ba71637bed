#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gpmpc/gp.hpp"
#include "gpmpc/matrix.hpp"
#include "gpmpc/rng.hpp"
#include "gpmpc/stats.hpp"

namespace gpmpc {

/// Per-dimension affine normalization (x - mean) / std.
struct Scaler {
  Vector mean;
  Vector std;

  /// Column means and sample stds of `data`; zero-variance columns get std 1.
  static Scaler fit(const Matrix& data);

  std::size_t dim() const noexcept { return mean.size(); }
  Vector transform(std::span<const double> x) const;
  Vector inverse(std::span<const double> x) const;

  bool operator==(const Scaler&) const = default;
};

struct Prediction {
  Vector mean;      ///< physical units
  Vector variance;  ///< diag(Sigma_f) + diag(Sigma_omega), physical units
};

/// One independent GP per state dimension over z = (x, u), all sharing the
/// same inputs, plus additive diagonal disturbance covariance. Every public
/// argument and result is in physical units.
class GPStateSpace {
 public:
  GPStateSpace(std::vector<GPModel> gps, Vector sigma_omega, Scaler z_scaler, Scaler y_scaler);

  std::size_t state_dim() const noexcept { return gps_.size(); }
  std::size_t input_dim() const noexcept { return z_scaler_.dim(); }
  std::size_t control_dim() const noexcept { return input_dim() - state_dim(); }
  std::size_t size() const noexcept { return gps_.front().size(); }

  const std::vector<GPModel>& gps() const noexcept { return gps_; }
  const Vector& sigma_omega() const noexcept { return sigma_omega_; }
  const Scaler& z_scaler() const noexcept { return z_scaler_; }
  const Scaler& y_scaler() const noexcept { return y_scaler_; }

  /// Physical z = [x, u].
  Vector make_input(std::span<const double> x, std::span<const double> u) const;

  Prediction predict(std::span<const double> x, std::span<const double> u) const;
  /// diag(Sigma_f) alone, physical units.
  Vector latent_variance(std::span<const double> x, std::span<const double> u) const;

  /// Posterior mean (physical) with its Jacobian d mean / d z, n_x by n_z.
  Vector mean_with_jacobian(std::span<const double> z, Matrix* jacobian) const;
  /// Posterior mean (physical) at physical z.
  Vector mean_at(std::span<const double> z) const;

  /// tr of the one-step predictive covariance in normalized output units,
  /// i.e. sum_i sigma_f,i^2 (normalized) + Sigma_omega,ii / std_i^2. When
  /// `grad` is non-empty it receives the gradient with respect to physical z.
  double normalized_variance_trace(std::span<const double> z, std::span<double> grad = {}) const;

  /// Conditions every output GP on the same input and its own target.
  GPStateSpace condition_all(std::span<const double> x, std::span<const double> u, std::span<const double> x_next,
                             bool noiseless) const;

  /// Sampling update: conditions each output noiselessly on the visited
  /// transition. An output whose noiseless update is singular (the input was
  /// already visited, or its latent variance is below the Schur floor) gets a
  /// noisy row instead so the shared inputs stay aligned across outputs.
  GPStateSpace condition_visited(std::span<const double> x, std::span<const double> u,
                                 std::span<const double> x_next) const;

  /// FNV-1a hash over data, flags, hyperparameters, scalers and Sigma_omega.
  std::uint64_t content_hash() const;

 private:
  std::vector<GPModel> gps_;
  Vector sigma_omega_;
  Scaler z_scaler_;
  Scaler y_scaler_;
};

/// Fits scalers on the raw data, then one GP per column of `y_raw` on the
/// normalized data (each output with its own child stream of `rng`).
/// Requires N >= 5. Fit failures are rethrown naming the output index.
GPStateSpace fit_state_space(const Matrix& z_raw, const Matrix& y_raw, std::span<const double> sigma_omega,
                             int restarts, RngStream& rng, const FitOptions& options = {},
                             std::vector<FitReport>* reports = nullptr);

struct Trajectory {
  Matrix states;    ///< (T + 1) x n_x
  Matrix controls;  ///< T x n_u
  std::int64_t sample_id = 0;
};

/// Feedback law u = policy(x, t).
using Policy = std::function<Vector(std::span<const double> x, int t)>;

struct SamplingOptions {
  /// Replace every Gaussian draw with its mean (the rng is still advanced).
  bool force_mean = false;
  /// Condition the working copy on each sampled transition (noiselessly).
  bool condition = true;
};

/// Exact closed-loop sampling of the GP plant distribution: draw chi_0, then
/// for t = 1..T apply u = policy(chi_{t-1}, t-1), draw chi_t from the
/// one-step predictive distribution and condition a private copy of the
/// model on it as a noiseless observation. `gpss` itself is never modified.
/// Policy exceptions are rethrown as PolicyFailure carrying the time index.
Trajectory sample_trajectory(const GPStateSpace& gpss, const Policy& policy, std::span<const double> x0_mean,
                             const Covariance& x0_cov, int horizon, RngStream& rng,
                             const SamplingOptions& options = {}, GPStateSpace* final_model = nullptr);

/// Mean rollout: chi_0 = x0_mean, chi_t = mu_f(z_{t-1}). With `condition`
/// set the model is also conditioned on each mean transition.
Trajectory nominal_trajectory(const GPStateSpace& gpss, const Policy& policy, std::span<const double> x0_mean,
                              int horizon, bool condition = false);

}  // namespace gpmpc
