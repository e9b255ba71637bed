#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpmpc/matrix.hpp"
#include "gpmpc/state_space.hpp"

namespace gpmpc {

/// One state constraint g(x) <= 0. The solver sees (g + b) / scale.
struct StateConstraint {
  std::string name;
  std::function<double(std::span<const double> x)> value;
  std::function<void(std::span<const double> x, std::span<double> grad)> gradient;
  double scale = 1.0;
  bool terminal_only = false;  ///< enforced at t = T only; reads 0 elsewhere
};

/// g(x) = w . x + offset.
StateConstraint affine_constraint(std::string name, Vector weights, double offset, double scale,
                                  bool terminal_only = false);

/// g1 = C_N - 800 (path), g2 = C_qc - 0.011 C_X (path), g3 = C_N - 150 (terminal).
std::vector<StateConstraint> bioreactor_constraints();

/// (T + 1) x n_g table of g_j(x_t) for a state trajectory with T + 1 rows;
/// terminal-only constraints read 0 before the last row.
Matrix evaluate_constraints(const std::vector<StateConstraint>& constraints, const Matrix& states);

struct OCPSpec {
  int horizon = 12;
  Vector r_diag{3.125e-8, 3.125e-6};
  /// Variance-penalty weights indexed by the step relative to the current
  /// time: eta[0] weighs the one-step covariance at z_t = (x_t, u_t).
  /// Missing entries are zero.
  Vector eta;
  Vector u_lower{120.0, 0.0};
  Vector u_upper{400.0, 40.0};
  std::vector<StateConstraint> constraints = bioreactor_constraints();
  /// Terminal cost l_f(x_T) = w . x_T (default -C_qc,T).
  Vector terminal_weights{0.0, 0.0, -1.0};

  double eta_at(int k) const { return k < static_cast<int>(eta.size()) ? eta[k] : 0.0; }
  std::size_t control_dim() const noexcept { return u_lower.size(); }

  /// Case-study problem; the state-dependent variant sets eta_0 = 15.
  static OCPSpec bioreactor(bool state_dependent = false);
};

/// Mean rollout from x_t under controls u_t..u_{T-1}.
struct Rollout {
  Matrix states;                 ///< x_t, x^_{t+1}, ..., x^_T
  Vector variance_traces;        ///< normalized one-step trace at z^_k, k = t..T-1
};

/// Rollout of the GP mean with one normalized variance trace per step.
/// Throws NonFinite on a divergent rollout.
Rollout rollout_mean(const GPStateSpace& gpss, std::span<const double> x_t, const Matrix& controls, int t);

/// sum_k du_k^T R du_k + sum_k eta_{k-t} tr Sigma_f(z^_k) + l_f(x^_T), where
/// du_t = u_t - prev_u (zero when prev_u is absent).
double ocp_objective(const Rollout& rollout, const Matrix& controls, const std::optional<Vector>& prev_u,
                     const OCPSpec& spec);

enum class GradientMode { Adjoint, FiniteDifference };

struct SolverOptions {
  /// Adjoint sweeps through the analytic GP-mean Jacobians; central finite
  /// differences in scaled control units remain available as a check.
  GradientMode gradient = GradientMode::Adjoint;
  double fd_step = 1e-4;
  double initial_penalty = 10.0;
  double penalty_growth = 5.0;
  double violation_tol = 1e-6;  ///< on scaled constraints
  int max_outer = 12;
  int max_inner = 200;
  double inner_tol = 1e-6;      ///< projected-gradient tolerance of the inner solve
  double objective_scale = 10.0;
};

struct SolveResult {
  Matrix controls;            ///< (T - t) x n_u, physical units
  double objective = 0.0;     ///< unscaled OCP objective
  double max_violation = 0.0; ///< max scaled (g + b) / scale, floored at 0
  int iterations = 0;         ///< inner iterations over all outer rounds
  int outer_iterations = 0;
  bool feasible = false;      ///< max_violation <= violation_tol
  bool hit_iteration_cap = false;
  bool merit_monotone = true; ///< every inner solve decreased its merit function monotonically
  double wall_seconds = 0.0;
};

/// Single-shooting OCP: controls scaled to [0, 1], state constraints
/// g_j(x^_k) + b_j^(k) <= 0 for k = t+1..T handled by an augmented
/// Lagrangian around minimize_box. `backoffs` is (T + 1) x n_g or empty.
/// Returns the best feasible iterate, or the least infeasible one.
/// Throws SolverDiverged on a non-finite objective.
SolveResult solve_ocp(const GPStateSpace& model, const OCPSpec& spec, const Matrix& backoffs,
                      std::span<const double> x_t, int t, const std::optional<Vector>& prev_u,
                      const Matrix* warm_start = nullptr, const SolverOptions& options = {});

/// Merit of the augmented Lagrangian in scaled controls, with its gradient,
/// exposed so the adjoint sweep can be checked against finite differences.
/// `multipliers` holds one entry per enforced (step, constraint) pair, step
/// major: path constraints at every predicted step, terminal ones at T only.
struct MeritProbe {
  double value = 0.0;
  Vector gradient;
};
MeritProbe probe_merit(const GPStateSpace& model, const OCPSpec& spec, const Matrix& backoffs,
                       std::span<const double> x_t, int t, const std::optional<Vector>& prev_u,
                       std::span<const double> scaled_controls, std::span<const double> multipliers, double penalty,
                       GradientMode mode, double fd_step = 1e-4);

struct VariantFlags {
  bool learning = false;
  bool state_dependent = false;
};

struct SolveDiagnostics {
  int t = 0;
  int iterations = 0;
  double objective = 0.0;
  double max_violation = 0.0;
  double wall_seconds = 0.0;
};

/// Controller memory for one closed-loop episode.
struct PolicyState {
  GPStateSpace model;
  OCPSpec spec;
  Matrix backoffs;
  VariantFlags variant;
  SolverOptions solver;
  std::optional<Vector> prev_u;  ///< absent before the first call
  std::optional<Vector> prev_x;
  std::optional<Matrix> warm_start;
  std::vector<SolveDiagnostics> diagnostics;

  PolicyState(GPStateSpace model, OCPSpec spec, Matrix backoffs, VariantFlags variant, SolverOptions solver = {});
};

/// Feedback law: with learning and t > 0 the model is first conditioned on
/// (prev_x, prev_u) -> x_t as a noisy observation; then the OCP is solved
/// from x_t, the first control is returned and remembered, and the shifted
/// solution is kept as the next warm start. Solver errors become PolicyFailure.
Vector policy_kappa(PolicyState& state, std::span<const double> x_t, int t);

}  // namespace gpmpc
