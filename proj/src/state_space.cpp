#include "gpmpc/state_space.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "gpmpc/errors.hpp"

namespace gpmpc {

Scaler Scaler::fit(const Matrix& data) {
  Scaler s;
  s.mean.resize(data.cols());
  s.std.resize(data.cols());
  for (std::size_t j = 0; j < data.cols(); ++j) {
    const Vector c = data.col(j);
    s.mean[j] = gpmpc::mean(c);
    const double sd = stddev(c);
    s.std[j] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

Vector Scaler::transform(std::span<const double> x) const {
  if (x.size() != dim()) throw DimensionMismatch("Scaler::transform: dimension mismatch");
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i]) / std[i];
  return out;
}

Vector Scaler::inverse(std::span<const double> x) const {
  if (x.size() != dim()) throw DimensionMismatch("Scaler::inverse: dimension mismatch");
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * std[i] + mean[i];
  return out;
}

GPStateSpace::GPStateSpace(std::vector<GPModel> gps, Vector sigma_omega, Scaler z_scaler, Scaler y_scaler)
    : gps_(std::move(gps)),
      sigma_omega_(std::move(sigma_omega)),
      z_scaler_(std::move(z_scaler)),
      y_scaler_(std::move(y_scaler)) {
  if (gps_.empty()) throw DimensionMismatch("GPStateSpace: at least one output GP required");
  const std::size_t n_x = gps_.size();
  if (sigma_omega_.size() != n_x || y_scaler_.dim() != n_x)
    throw DimensionMismatch("GPStateSpace: output dimension mismatch");
  if (z_scaler_.dim() <= n_x) throw DimensionMismatch("GPStateSpace: inputs must hold state and control");
  for (const auto& gp : gps_) {
    if (gp.input_dim() != z_scaler_.dim()) throw DimensionMismatch("GPStateSpace: GP input dimension mismatch");
    if (gp.inputs() != gps_.front().inputs()) throw DimensionMismatch("GPStateSpace: GPs must share inputs");
  }
}

Vector GPStateSpace::make_input(std::span<const double> x, std::span<const double> u) const {
  if (x.size() != state_dim() || u.size() != control_dim())
    throw DimensionMismatch("GPStateSpace: state/control dimension mismatch");
  Vector z(x.begin(), x.end());
  z.insert(z.end(), u.begin(), u.end());
  return z;
}

Prediction GPStateSpace::predict(std::span<const double> x, std::span<const double> u) const {
  const Vector zn = z_scaler_.transform(make_input(x, u));
  Prediction p;
  p.mean.resize(state_dim());
  p.variance.resize(state_dim());
  for (std::size_t i = 0; i < state_dim(); ++i) {
    const Posterior post = gps_[i].posterior(zn);
    const double sd = y_scaler_.std[i];
    p.mean[i] = y_scaler_.mean[i] + sd * post.mean;
    p.variance[i] = sd * sd * post.variance + sigma_omega_[i];
  }
  return p;
}

Vector GPStateSpace::latent_variance(std::span<const double> x, std::span<const double> u) const {
  const Vector zn = z_scaler_.transform(make_input(x, u));
  Vector v(state_dim());
  for (std::size_t i = 0; i < state_dim(); ++i) {
    const double sd = y_scaler_.std[i];
    v[i] = sd * sd * gps_[i].posterior(zn).variance;
  }
  return v;
}

Vector GPStateSpace::mean_at(std::span<const double> z) const {
  const Vector zn = z_scaler_.transform(z);
  Vector m(state_dim());
  for (std::size_t i = 0; i < state_dim(); ++i) m[i] = y_scaler_.mean[i] + y_scaler_.std[i] * gps_[i].mean(zn);
  return m;
}

Vector GPStateSpace::mean_with_jacobian(std::span<const double> z, Matrix* jacobian) const {
  if (jacobian == nullptr) return mean_at(z);
  const Vector zn = z_scaler_.transform(z);
  const std::size_t nz = input_dim();
  if (jacobian->rows() != state_dim() || jacobian->cols() != nz) *jacobian = Matrix(state_dim(), nz);
  Vector m(state_dim());
  for (std::size_t i = 0; i < state_dim(); ++i) {
    auto row = jacobian->row(i);
    const double sd = y_scaler_.std[i];
    m[i] = y_scaler_.mean[i] + sd * gps_[i].mean_with_gradient(zn, row);
    for (std::size_t d = 0; d < nz; ++d) row[d] *= sd / z_scaler_.std[d];
  }
  return m;
}

double GPStateSpace::normalized_variance_trace(std::span<const double> z, std::span<double> grad) const {
  const Vector zn = z_scaler_.transform(z);
  const std::size_t nz = input_dim();
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != nz) throw DimensionMismatch("normalized_variance_trace: gradient size");
  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
  Vector g(nz);
  double trace = 0.0;
  for (std::size_t i = 0; i < state_dim(); ++i) {
    const double sd = y_scaler_.std[i];
    trace += sigma_omega_[i] / (sd * sd);
    if (want_grad) {
      trace += gps_[i].variance_with_gradient(zn, g);
      for (std::size_t d = 0; d < nz; ++d) grad[d] += g[d] / z_scaler_.std[d];
    } else {
      trace += gps_[i].posterior(zn).variance;
    }
  }
  return trace;
}

GPStateSpace GPStateSpace::condition_all(std::span<const double> x, std::span<const double> u,
                                         std::span<const double> x_next, bool noiseless) const {
  if (x_next.size() != state_dim()) throw DimensionMismatch("condition_all: target dimension mismatch");
  const Vector zn = z_scaler_.transform(make_input(x, u));
  const Vector yn = y_scaler_.transform(x_next);
  std::vector<GPModel> updated;
  updated.reserve(state_dim());
  for (std::size_t i = 0; i < state_dim(); ++i) updated.push_back(gps_[i].condition(zn, yn[i], noiseless));
  return GPStateSpace(std::move(updated), sigma_omega_, z_scaler_, y_scaler_);
}

GPStateSpace GPStateSpace::condition_visited(std::span<const double> x, std::span<const double> u,
                                             std::span<const double> x_next) const {
  if (x_next.size() != state_dim()) throw DimensionMismatch("condition_visited: target dimension mismatch");
  const Vector zn = z_scaler_.transform(make_input(x, u));
  const Vector yn = y_scaler_.transform(x_next);
  std::vector<GPModel> updated;
  updated.reserve(state_dim());
  for (std::size_t i = 0; i < state_dim(); ++i) {
    try {
      updated.push_back(gps_[i].condition(zn, yn[i], true));
    } catch (const SingularUpdate&) {
      updated.push_back(gps_[i].condition(zn, yn[i], false));
    }
  }
  return GPStateSpace(std::move(updated), sigma_omega_, z_scaler_, y_scaler_);
}

namespace {

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ull;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ull;
    }
  }
  void doubles(std::span<const double> v) { bytes(v.data(), v.size() * sizeof(double)); }
};

}  // namespace

std::uint64_t GPStateSpace::content_hash() const {
  Fnv1a f;
  for (const auto& gp : gps_) {
    f.doubles(gp.inputs().values());
    f.doubles(gp.targets());
    f.bytes(gp.noise_flags().data(), gp.noise_flags().size());
    f.doubles(gp.hyperparameters().to_vector());
  }
  f.doubles(sigma_omega_);
  f.doubles(z_scaler_.mean);
  f.doubles(z_scaler_.std);
  f.doubles(y_scaler_.mean);
  f.doubles(y_scaler_.std);
  return f.h;
}

GPStateSpace fit_state_space(const Matrix& z_raw, const Matrix& y_raw, std::span<const double> sigma_omega,
                             int restarts, RngStream& rng, const FitOptions& options,
                             std::vector<FitReport>* reports) {
  if (z_raw.rows() < 5) throw DomainError("fit_state_space: need at least 5 data points");
  if (y_raw.rows() != z_raw.rows()) throw DimensionMismatch("fit_state_space: Z and Y row counts differ");
  if (sigma_omega.size() != y_raw.cols()) throw DimensionMismatch("fit_state_space: Sigma_omega size mismatch");

  const Scaler zs = Scaler::fit(z_raw);
  const Scaler ys = Scaler::fit(y_raw);
  Matrix zn(z_raw.rows(), z_raw.cols());
  for (std::size_t r = 0; r < z_raw.rows(); ++r) {
    const Vector t = zs.transform(z_raw.row(r));
    std::copy(t.begin(), t.end(), zn.row(r).begin());
  }

  if (reports) reports->clear();
  std::vector<GPModel> gps;
  for (std::size_t i = 0; i < y_raw.cols(); ++i) {
    Vector yn(y_raw.rows());
    for (std::size_t r = 0; r < y_raw.rows(); ++r) yn[r] = (y_raw(r, i) - ys.mean[i]) / ys.std[i];
    RngStream child = rng.derive(i);
    FitReport rep;
    try {
      rep = fit_hyperparameters(zn, yn, restarts, child, options);
    } catch (const AllRestartsFailed& e) {
      throw AllRestartsFailed("output " + std::to_string(i) + ": " + e.what());
    }
    gps.emplace_back(zn, std::move(yn), rep.psi);
    if (reports) reports->push_back(std::move(rep));
  }
  return GPStateSpace(std::move(gps), Vector(sigma_omega.begin(), sigma_omega.end()), zs, ys);
}

namespace {

Vector call_policy(const Policy& policy, std::span<const double> x, int t, std::size_t n_u) {
  Vector u;
  try {
    u = policy(x, t);
  } catch (const PolicyFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw PolicyFailure(t, e.what());
  }
  if (u.size() != n_u) throw PolicyFailure(t, "policy returned a control of the wrong dimension");
  return u;
}

}  // namespace

Trajectory sample_trajectory(const GPStateSpace& gpss, const Policy& policy, std::span<const double> x0_mean,
                             const Covariance& x0_cov, int horizon, RngStream& rng, const SamplingOptions& options,
                             GPStateSpace* final_model) {
  if (horizon < 1) throw DomainError("sample_trajectory: horizon must be >= 1");
  const std::size_t n_x = gpss.state_dim();
  const std::size_t n_u = gpss.control_dim();
  if (x0_mean.size() != n_x) throw DimensionMismatch("sample_trajectory: x0 dimension mismatch");

  Trajectory traj{Matrix(horizon + 1, n_x), Matrix(horizon, n_u), 0};
  Vector x = sample_gaussian(x0_mean, x0_cov, rng);
  if (options.force_mean) x.assign(x0_mean.begin(), x0_mean.end());
  std::copy(x.begin(), x.end(), traj.states.row(0).begin());

  GPStateSpace working = gpss;
  for (int t = 1; t <= horizon; ++t) {
    const Vector u = call_policy(policy, x, t - 1, n_u);
    std::copy(u.begin(), u.end(), traj.controls.row(t - 1).begin());
    const Prediction pred = working.predict(x, u);
    Vector next = sample_gaussian(pred.mean, DiagonalCovariance{pred.variance}, rng);
    if (options.force_mean) next = pred.mean;
    if (options.condition) working = working.condition_visited(x, u, next);
    std::copy(next.begin(), next.end(), traj.states.row(t).begin());
    x = std::move(next);
  }
  if (final_model) *final_model = std::move(working);
  return traj;
}

Trajectory nominal_trajectory(const GPStateSpace& gpss, const Policy& policy, std::span<const double> x0_mean,
                              int horizon, bool condition) {
  if (horizon < 1) throw DomainError("nominal_trajectory: horizon must be >= 1");
  const std::size_t n_x = gpss.state_dim();
  const std::size_t n_u = gpss.control_dim();
  if (x0_mean.size() != n_x) throw DimensionMismatch("nominal_trajectory: x0 dimension mismatch");

  Trajectory traj{Matrix(horizon + 1, n_x), Matrix(horizon, n_u), 0};
  Vector x(x0_mean.begin(), x0_mean.end());
  std::copy(x.begin(), x.end(), traj.states.row(0).begin());
  GPStateSpace working = gpss;
  for (int t = 1; t <= horizon; ++t) {
    const Vector u = call_policy(policy, x, t - 1, n_u);
    std::copy(u.begin(), u.end(), traj.controls.row(t - 1).begin());
    Vector next = working.mean_at(working.make_input(x, u));
    if (condition) working = working.condition_visited(x, u, next);
    std::copy(next.begin(), next.end(), traj.states.row(t).begin());
    x = std::move(next);
  }
  return traj;
}

}  // namespace gpmpc
