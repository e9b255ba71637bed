#include "gpmpc/plant.hpp"

#include <algorithm>
#include <cmath>

#include "gpmpc/errors.hpp"
#include "gpmpc/sobol.hpp"
#include "gpmpc/stats.hpp"

namespace gpmpc {

NoiseSpec NoiseSpec::zero() {
  NoiseSpec n;
  n.sigma_nu_diag = {0.0, 0.0, 0.0};
  n.sigma_omega_diag = {0.0, 0.0, 0.0};
  n.x0_cov_diag = {0.0, 0.0, 0.0};
  return n;
}

namespace {

void check_dims(std::span<const double> x, std::span<const double> u) {
  if (x.size() != kPlantStates || u.size() != kPlantControls)
    throw DimensionMismatch("plant: expected 3 states and 2 controls");
}

}  // namespace

std::array<double, 3> rhs(std::span<const double> x, std::span<const double> u, const BioreactorParams& p) {
  check_dims(x, u);
  const double cx = std::max(x[0], 0.0);
  const double cn = std::max(x[1], 0.0);
  const double cq = std::max(x[2], 0.0);
  const double light = u[0];
  const double feed = u[1];

  const double growth = p.u_m * light / (light + p.k_s + light * light / p.k_i) * cx * cn / (cn + p.K_N);
  const double production = p.k_m * light / (light + p.k_sq + light * light / p.k_iq) * cx;
  return {growth - p.u_d * cx, -p.Y_NX * growth + feed, production - p.k_d * cq / (cn + p.K_Np)};
}

Vector step(std::span<const double> x, std::span<const double> u, double dt, const BioreactorParams& p,
            int substeps) {
  check_dims(x, u);
  if (!(dt > 0.0)) throw DomainError("step: dt must be positive");
  if (substeps < 1) throw DomainError("step: substeps must be >= 1");
  const double h = dt / substeps;
  std::array<double, 3> s{x[0], x[1], x[2]};
  std::array<double, 3> tmp{};
  for (int k = 0; k < substeps; ++k) {
    const auto k1 = rhs(s, u, p);
    for (int i = 0; i < 3; ++i) tmp[i] = s[i] + 0.5 * h * k1[i];
    const auto k2 = rhs(tmp, u, p);
    for (int i = 0; i < 3; ++i) tmp[i] = s[i] + 0.5 * h * k2[i];
    const auto k3 = rhs(tmp, u, p);
    for (int i = 0; i < 3; ++i) tmp[i] = s[i] + h * k3[i];
    const auto k4 = rhs(tmp, u, p);
    for (int i = 0; i < 3; ++i) s[i] = std::max(s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]), 0.0);
  }
  for (double v : s)
    if (!std::isfinite(v) || v > 1e9) throw NonFinite("step: state left [0, 1e9]");
  return {s.begin(), s.end()};
}

Vector plant_transition(std::span<const double> x, std::span<const double> u, const NoiseSpec& noise,
                        RngStream& rng, double dt, const BioreactorParams& p) {
  const Vector next = step(x, u, dt, p);
  Vector out = sample_gaussian(next, DiagonalCovariance{noise.sigma_omega_diag}, rng);
  for (auto& v : out) v = std::max(v, 0.0);
  return out;
}

Vector measure(std::span<const double> x, const NoiseSpec& noise, RngStream& rng) {
  return sample_gaussian(x, DiagonalCovariance{noise.sigma_nu_diag}, rng);
}

Dataset generate_dataset_type1(int n, const NoiseSpec& noise, RngStream& rng, const BioreactorParams& p) {
  if (n < 1) throw DomainError("generate_dataset_type1: N must be >= 1");
  Dataset ds;
  ds.type = 1;
  ds.seed = rng.seed();
  ds.z = sobol(static_cast<std::size_t>(n), 5, kType1Lower, kType1Upper);
  ds.y = Matrix(n, kPlantStates);
  for (int r = 0; r < n; ++r) {
    const auto z = ds.z.row(r);
    const Vector next = step(z.subspan(0, 3), z.subspan(3, 2), kSamplingHours, p);
    const Vector y = measure(next, noise, rng);
    std::copy(y.begin(), y.end(), ds.y.row(r).begin());
  }
  return ds;
}

Dataset generate_dataset_type2(int n, int horizon, const NoiseSpec& noise, RngStream& rng,
                               const BioreactorParams& p) {
  if (horizon < 1) throw DomainError("generate_dataset_type2: horizon must be >= 1");
  if (n < horizon) throw DomainError("generate_dataset_type2: N must be >= T");
  Dataset ds;
  ds.type = 2;
  ds.seed = rng.seed();
  ds.trajectories = (n + horizon - 1) / horizon;
  ds.z = Matrix(n, 5);
  ds.y = Matrix(n, kPlantStates);

  SobolSequence controls(2);
  int row = 0;
  for (int traj = 0; traj < ds.trajectories && row < n; ++traj) {
    Vector x = sample_gaussian(noise.x0_mean, DiagonalCovariance{noise.x0_cov_diag}, rng);
    for (auto& v : x) v = std::max(v, 0.0);
    for (int t = 0; t < horizon && row < n; ++t, ++row) {
      const Vector unit = controls.next();
      const Vector u{kControlLower[0] + unit[0] * (kControlUpper[0] - kControlLower[0]),
                     kControlLower[1] + unit[1] * (kControlUpper[1] - kControlLower[1])};
      const Vector next = plant_transition(x, u, noise, rng, kSamplingHours, p);
      const Vector y = measure(next, noise, rng);
      auto z = ds.z.row(row);
      std::copy(x.begin(), x.end(), z.begin());
      std::copy(u.begin(), u.end(), z.begin() + 3);
      std::copy(y.begin(), y.end(), ds.y.row(row).begin());
      x = next;
    }
  }
  return ds;
}

}  // namespace gpmpc
