#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "gpmpc/matrix.hpp"
#include "gpmpc/rng.hpp"

namespace gpmpc {

/// Photobioreactor kinetic constants (units: 1/h, mg/L, mg/g, umol/m^2/s).
struct BioreactorParams {
  double u_m = 0.0572;
  double u_d = 0.0;
  double K_N = 393.1;
  double Y_NX = 504.5;
  double k_m = 0.00016;
  double k_d = 0.281;
  double k_s = 178.9;
  double k_i = 447.1;
  double k_sq = 23.51;
  double k_iq = 800.0;
  double K_Np = 16.89;
};

/// Diagonal noise and initial-condition description for x = [C_X, C_N, C_qc].
struct NoiseSpec {
  Vector sigma_nu_diag{4e-4, 0.1, 1e-8};
  Vector sigma_omega_diag{4e-4, 0.1, 1e-8};
  Vector x0_mean{1.0, 150.0, 0.0};
  Vector x0_cov_diag{1e-3, 22.5, 0.0};

  static NoiseSpec zero();
};

inline constexpr std::size_t kPlantStates = 3;
inline constexpr std::size_t kPlantControls = 2;
inline constexpr double kSamplingHours = 20.0;
inline constexpr int kDefaultSubsteps = 400;

/// Control box [I, F_N].
inline constexpr std::array<double, 2> kControlLower{120.0, 0.0};
inline constexpr std::array<double, 2> kControlUpper{400.0, 40.0};

/// Right-hand side of the balance equations for x = [C_X g/L, C_N mg/L,
/// C_qc mg/L] and u = [I umol/m^2/s, F_N mg/L/h]. Negative states are
/// clamped to 0 before evaluation.
std::array<double, 3> rhs(std::span<const double> x, std::span<const double> u, const BioreactorParams& p = {});

/// Classical RK4 over `dt` hours with `substeps` equal steps, clamping
/// negative states to 0 after each step. Throws NonFinite if a state leaves
/// [0, 1e9].
Vector step(std::span<const double> x, std::span<const double> u, double dt = kSamplingHours,
            const BioreactorParams& p = {}, int substeps = kDefaultSubsteps);

/// step(x, u) + omega, omega ~ N(0, Sigma_omega), clamped at 0.
Vector plant_transition(std::span<const double> x, std::span<const double> u, const NoiseSpec& noise,
                        RngStream& rng, double dt = kSamplingHours, const BioreactorParams& p = {});

/// x + nu, nu ~ N(0, Sigma_nu). Not clamped.
Vector measure(std::span<const double> x, const NoiseSpec& noise, RngStream& rng);

struct Dataset {
  Matrix z;  ///< N x 5: C_X, C_N, C_qc, I, F_N
  Matrix y;  ///< N x 3
  int type = 1;
  std::uint64_t seed = 0;
  int trajectories = 0;  ///< open-loop source trajectories (type 2 only)
};

/// Box of the type-1 input design.
inline constexpr std::array<double, 5> kType1Lower{0.0, 50.0, 0.0, 120.0, 0.0};
inline constexpr std::array<double, 5> kType1Upper{20.0, 800.0, 0.18, 400.0, 40.0};

/// Inputs from a 5-D Sobol design over the type-1 box; targets are the
/// noise-free one-step plant response plus measurement noise.
Dataset generate_dataset_type1(int n, const NoiseSpec& noise, RngStream& rng, const BioreactorParams& p = {});

/// ceil(N / T) open-loop plant runs from sampled initial conditions with
/// controls from a 2-D Sobol stream; consecutive (x_t, u_t) -> measured
/// x_{t+1} pairs, truncated to N rows.
Dataset generate_dataset_type2(int n, int horizon, const NoiseSpec& noise, RngStream& rng,
                               const BioreactorParams& p = {});

}  // namespace gpmpc
