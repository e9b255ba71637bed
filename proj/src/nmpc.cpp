#include "gpmpc/nmpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "gpmpc/box_qn.hpp"
#include "gpmpc/errors.hpp"

namespace gpmpc {

StateConstraint affine_constraint(std::string name, Vector weights, double offset, double scale, bool terminal_only) {
  StateConstraint c;
  c.name = std::move(name);
  c.scale = scale;
  c.terminal_only = terminal_only;
  c.value = [weights, offset](std::span<const double> x) {
    if (x.size() != weights.size()) throw DimensionMismatch("affine constraint: state dimension mismatch");
    return dot(weights, x) + offset;
  };
  c.gradient = [weights](std::span<const double>, std::span<double> grad) {
    std::copy(weights.begin(), weights.end(), grad.begin());
  };
  return c;
}

std::vector<StateConstraint> bioreactor_constraints() {
  return {affine_constraint("g1", {0.0, 1.0, 0.0}, -800.0, 800.0),
          affine_constraint("g2", {-0.011, 0.0, 1.0}, 0.0, 0.011 * 20.0),
          affine_constraint("g3", {0.0, 1.0, 0.0}, -150.0, 150.0, true)};
}

Matrix evaluate_constraints(const std::vector<StateConstraint>& constraints, const Matrix& states) {
  const std::size_t last = states.rows() - 1;
  Matrix g(states.rows(), constraints.size());
  for (std::size_t t = 0; t < states.rows(); ++t)
    for (std::size_t j = 0; j < constraints.size(); ++j)
      g(t, j) = (constraints[j].terminal_only && t != last) ? 0.0 : constraints[j].value(states.row(t));
  return g;
}

OCPSpec OCPSpec::bioreactor(bool state_dependent) {
  OCPSpec s;
  if (state_dependent) s.eta = {15.0};
  return s;
}

Rollout rollout_mean(const GPStateSpace& gpss, std::span<const double> x_t, const Matrix& controls, int t) {
  (void)t;
  const std::size_t m = controls.rows();
  Rollout r{Matrix(m + 1, gpss.state_dim()), Vector(m)};
  std::copy(x_t.begin(), x_t.end(), r.states.row(0).begin());
  for (std::size_t k = 0; k < m; ++k) {
    const Vector z = gpss.make_input(r.states.row(k), controls.row(k));
    r.variance_traces[k] = gpss.normalized_variance_trace(z);
    const Vector next = gpss.mean_at(z);
    for (double v : next)
      if (!std::isfinite(v)) throw NonFinite("rollout_mean: non-finite predicted state");
    std::copy(next.begin(), next.end(), r.states.row(k + 1).begin());
  }
  return r;
}

double ocp_objective(const Rollout& rollout, const Matrix& controls, const std::optional<Vector>& prev_u,
                     const OCPSpec& spec) {
  const std::size_t m = controls.rows();
  const std::size_t n_u = controls.cols();
  double j = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t d = 0; d < n_u; ++d) {
      double du = 0.0;
      if (k > 0)
        du = controls(k, d) - controls(k - 1, d);
      else if (prev_u)
        du = controls(0, d) - (*prev_u)[d];
      j += spec.r_diag[d] * du * du;
    }
    j += spec.eta_at(static_cast<int>(k)) * rollout.variance_traces[k];
  }
  j += dot(spec.terminal_weights, rollout.states.row(m));
  return j;
}

namespace {

/// Single-shooting transcription shared by the solver and the merit probe.
class ShootingProblem {
 public:
  ShootingProblem(const GPStateSpace& model, const OCPSpec& spec, const Matrix& backoffs,
                  std::span<const double> x_t, int t, const std::optional<Vector>& prev_u, double objective_scale)
      : model_(model),
        spec_(spec),
        backoffs_(backoffs),
        x_t_(x_t.begin(), x_t.end()),
        t_(t),
        prev_u_(prev_u),
        obj_scale_(objective_scale),
        n_x_(model.state_dim()),
        n_u_(spec.control_dim()),
        m_(static_cast<std::size_t>(spec.horizon - t)) {
    if (t < 0 || t >= spec.horizon) throw DomainError("solve_ocp: t must lie in [0, T)");
    if (x_t.size() != n_x_) throw DimensionMismatch("solve_ocp: state dimension mismatch");
    if (model.control_dim() != n_u_) throw DimensionMismatch("solve_ocp: control dimension mismatch");
    if (!backoffs.empty() &&
        (backoffs.rows() != static_cast<std::size_t>(spec.horizon + 1) || backoffs.cols() != spec.constraints.size()))
      throw DimensionMismatch("solve_ocp: back-off table must be (T + 1) x n_g");
    for (double v : x_t)
      if (!std::isfinite(v)) throw DomainError("solve_ocp: non-finite state");
    for (std::size_t i = 1; i <= m_; ++i)
      for (std::size_t j = 0; j < spec.constraints.size(); ++j)
        if (!spec.constraints[j].terminal_only || i == m_) cons_.push_back({i, j});
    states_ = Matrix(m_ + 1, n_x_);
    jac_.assign(m_, Matrix(n_x_, n_x_ + n_u_));
    tgrad_.assign(m_, Vector(n_x_ + n_u_));
    traces_.assign(m_, 0.0);
    u_.assign(m_ * n_u_, 0.0);
    z_.assign(n_x_ + n_u_, 0.0);
    adj_x_ = Matrix(m_ + 1, n_x_);
    adj_u_ = Matrix(m_, n_u_);
    cgrad_.assign(n_x_, 0.0);
  }

  std::size_t num_vars() const { return m_ * n_u_; }
  std::size_t num_constraints() const { return cons_.size(); }

  Matrix to_physical(std::span<const double> s) const {
    Matrix u(m_, n_u_);
    for (std::size_t k = 0; k < m_; ++k)
      for (std::size_t d = 0; d < n_u_; ++d)
        u(k, d) = spec_.u_lower[d] + s[k * n_u_ + d] * (spec_.u_upper[d] - spec_.u_lower[d]);
    return u;
  }

  Vector to_scaled(const Matrix& u) const {
    Vector s(m_ * n_u_);
    for (std::size_t k = 0; k < m_; ++k)
      for (std::size_t d = 0; d < n_u_; ++d) {
        const double w = spec_.u_upper[d] - spec_.u_lower[d];
        s[k * n_u_ + d] = w > 0.0 ? std::clamp((u(k, d) - spec_.u_lower[d]) / w, 0.0, 1.0) : 0.0;
      }
    return s;
  }

  /// Rolls out, returning the unscaled objective and filling scaled
  /// constraint values. With `with_jacobians` the per-step derivatives are kept.
  double forward(std::span<const double> s, Vector& cvals, bool with_jacobians) {
    for (std::size_t k = 0; k < m_; ++k)
      for (std::size_t d = 0; d < n_u_; ++d)
        u_[k * n_u_ + d] = spec_.u_lower[d] + s[k * n_u_ + d] * (spec_.u_upper[d] - spec_.u_lower[d]);
    std::copy(x_t_.begin(), x_t_.end(), states_.row(0).begin());
    double j = 0.0;
    for (std::size_t k = 0; k < m_; ++k) {
      const auto xk = states_.row(k);
      std::copy(xk.begin(), xk.end(), z_.begin());
      std::copy(u_.begin() + k * n_u_, u_.begin() + (k + 1) * n_u_, z_.begin() + n_x_);
      const double eta = spec_.eta_at(static_cast<int>(k));
      if (eta != 0.0) {
        traces_[k] = model_.normalized_variance_trace(z_, with_jacobians ? std::span<double>(tgrad_[k])
                                                                         : std::span<double>());
        j += eta * traces_[k];
      }
      const Vector next = model_.mean_with_jacobian(z_, with_jacobians ? &jac_[k] : nullptr);
      for (std::size_t i = 0; i < n_x_; ++i) {
        if (!std::isfinite(next[i])) throw SolverDiverged("solve_ocp: non-finite rollout");
        states_(k + 1, i) = next[i];
      }
      for (std::size_t d = 0; d < n_u_; ++d) {
        const double du = move(k, d);
        j += spec_.r_diag[d] * du * du;
      }
    }
    j += dot(spec_.terminal_weights, states_.row(m_));
    cvals.resize(cons_.size());
    for (std::size_t c = 0; c < cons_.size(); ++c) {
      const auto [i, jj] = cons_[c];
      const StateConstraint& g = spec_.constraints[jj];
      const double b = backoffs_.empty() ? 0.0 : backoffs_(t_ + i, jj);
      cvals[c] = (g.value(states_.row(i)) + b) / g.scale;
    }
    if (!std::isfinite(j)) throw SolverDiverged("solve_ocp: non-finite objective");
    return j;
  }

  double merit(std::span<const double> s, std::span<double> grad, std::span<const double> lambda, double rho) {
    Vector c;
    const double j = forward(s, c, !grad.empty());
    double f = obj_scale_ * j;
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double w = std::max(0.0, lambda[i] + rho * c[i]);
      f += (w * w - lambda[i] * lambda[i]) / (2.0 * rho);
    }
    if (!grad.empty()) backward(c, lambda, rho, grad);
    return f;
  }

  double merit_value(std::span<const double> s, std::span<const double> lambda, double rho) {
    return merit(s, {}, lambda, rho);
  }

 private:
  double move(std::size_t k, std::size_t d) const {
    if (k > 0) return u_[k * n_u_ + d] - u_[(k - 1) * n_u_ + d];
    if (prev_u_) return u_[d] - (*prev_u_)[d];
    return 0.0;
  }

  void backward(const Vector& c, std::span<const double> lambda, double rho, std::span<double> grad) {
    std::fill(adj_x_.data(), adj_x_.data() + adj_x_.size(), 0.0);
    std::fill(adj_u_.data(), adj_u_.data() + adj_u_.size(), 0.0);
    for (std::size_t i = 0; i < n_x_; ++i) adj_x_(m_, i) += obj_scale_ * spec_.terminal_weights[i];
    for (std::size_t ci = 0; ci < cons_.size(); ++ci) {
      const double w = std::max(0.0, lambda[ci] + rho * c[ci]);
      if (w == 0.0) continue;
      const auto [i, jj] = cons_[ci];
      const StateConstraint& g = spec_.constraints[jj];
      g.gradient(states_.row(i), cgrad_);
      for (std::size_t d = 0; d < n_x_; ++d) adj_x_(i, d) += w * cgrad_[d] / g.scale;
    }
    for (std::size_t k = 0; k < m_; ++k) {
      const double eta = spec_.eta_at(static_cast<int>(k));
      if (eta != 0.0) {
        for (std::size_t d = 0; d < n_x_; ++d) adj_x_(k, d) += obj_scale_ * eta * tgrad_[k][d];
        for (std::size_t d = 0; d < n_u_; ++d) adj_u_(k, d) += obj_scale_ * eta * tgrad_[k][n_x_ + d];
      }
      for (std::size_t d = 0; d < n_u_; ++d) {
        const double g2 = 2.0 * obj_scale_ * spec_.r_diag[d] * move(k, d);
        if (k > 0) {
          adj_u_(k, d) += g2;
          adj_u_(k - 1, d) -= g2;
        } else if (prev_u_) {
          adj_u_(k, d) += g2;
        }
      }
    }
    for (std::size_t k = m_; k-- > 0;) {
      const auto lam = adj_x_.row(k + 1);
      const Matrix& jk = jac_[k];
      for (std::size_t i = 0; i < n_x_; ++i) {
        const double li = lam[i];
        if (li == 0.0) continue;
        const auto row = jk.row(i);
        for (std::size_t d = 0; d < n_x_; ++d) adj_x_(k, d) += li * row[d];
        for (std::size_t d = 0; d < n_u_; ++d) adj_u_(k, d) += li * row[n_x_ + d];
      }
    }
    for (std::size_t k = 0; k < m_; ++k)
      for (std::size_t d = 0; d < n_u_; ++d)
        grad[k * n_u_ + d] = adj_u_(k, d) * (spec_.u_upper[d] - spec_.u_lower[d]);
  }

  struct ConstraintRef {
    std::size_t step;  // offset from t, 1..m
    std::size_t index;
  };

  const GPStateSpace& model_;
  const OCPSpec& spec_;
  const Matrix& backoffs_;
  Vector x_t_;
  int t_;
  std::optional<Vector> prev_u_;
  double obj_scale_;
  std::size_t n_x_, n_u_, m_;
  std::vector<ConstraintRef> cons_;

  Matrix states_;
  std::vector<Matrix> jac_;
  std::vector<Vector> tgrad_;
  Vector traces_;
  Vector u_;
  Vector z_;
  Matrix adj_x_;
  Matrix adj_u_;
  Vector cgrad_;
};

void fd_gradient(ShootingProblem& p, std::span<const double> s, std::span<const double> lambda, double rho, double h,
                 std::span<double> grad) {
  Vector xp(s.begin(), s.end());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + h;
    const double fp = p.merit_value(xp, lambda, rho);
    xp[i] = orig - h;
    const double fm = p.merit_value(xp, lambda, rho);
    xp[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
}

double max_violation(const Vector& c) {
  double v = 0.0;
  for (double ci : c) v = std::max(v, ci);
  return v;
}

}  // namespace

MeritProbe probe_merit(const GPStateSpace& model, const OCPSpec& spec, const Matrix& backoffs,
                       std::span<const double> x_t, int t, const std::optional<Vector>& prev_u,
                       std::span<const double> scaled_controls, std::span<const double> multipliers, double penalty,
                       GradientMode mode, double fd_step) {
  ShootingProblem p(model, spec, backoffs, x_t, t, prev_u, 1.0);
  if (scaled_controls.size() != p.num_vars()) throw DimensionMismatch("probe_merit: control vector size");
  if (multipliers.size() != p.num_constraints()) throw DimensionMismatch("probe_merit: multiplier count");
  MeritProbe out;
  out.gradient.assign(p.num_vars(), 0.0);
  if (mode == GradientMode::Adjoint) {
    out.value = p.merit(scaled_controls, out.gradient, multipliers, penalty);
  } else {
    out.value = p.merit_value(scaled_controls, multipliers, penalty);
    fd_gradient(p, scaled_controls, multipliers, penalty, fd_step, out.gradient);
  }
  return out;
}

SolveResult solve_ocp(const GPStateSpace& model, const OCPSpec& spec, const Matrix& backoffs,
                      std::span<const double> x_t, int t, const std::optional<Vector>& prev_u,
                      const Matrix* warm_start, const SolverOptions& options) {
  const auto start_time = std::chrono::steady_clock::now();
  ShootingProblem prob(model, spec, backoffs, x_t, t, prev_u, options.objective_scale);
  const std::size_t n = prob.num_vars();

  Vector s(n, 0.5);
  if (warm_start && warm_start->rows() * warm_start->cols() == n && warm_start->cols() == spec.control_dim())
    s = prob.to_scaled(*warm_start);

  Vector lambda(prob.num_constraints(), 0.0);
  double rho = options.initial_penalty;
  const Vector lo(n, 0.0), hi(n, 1.0);

  BoxQNOptions inner;
  inner.max_iterations = options.max_inner;
  inner.projected_gradient_tol = options.inner_tol;

  SolveResult best;
  bool have_best = false;
  double prev_viol = std::numeric_limits<double>::infinity();
  SolveResult out;

  for (int outer = 0; outer < options.max_outer; ++outer) {
    SmoothObjective f;
    if (options.gradient == GradientMode::Adjoint) {
      f = [&](std::span<const double> x, std::span<double> g) { return prob.merit(x, g, lambda, rho); };
    } else {
      f = [&](std::span<const double> x, std::span<double> g) {
        fd_gradient(prob, x, lambda, rho, options.fd_step, g);
        return prob.merit_value(x, lambda, rho);
      };
    }
    const double f_start = prob.merit_value(s, lambda, rho);
    const BoxQNResult res = minimize_box(f, s, lo, hi, inner);
    if (res.f > f_start) out.merit_monotone = false;
    out.iterations += res.iterations;
    out.outer_iterations = outer + 1;
    s = res.x;

    Vector c;
    const double obj = prob.forward(s, c, false);
    const double viol = max_violation(c);
    const bool feasible = viol <= options.violation_tol;
    const bool better = !have_best || (feasible && (!best.feasible || obj < best.objective)) ||
                        (!feasible && !best.feasible && viol < best.max_violation);
    if (better) {
      best.controls = prob.to_physical(s);
      best.objective = obj;
      best.max_violation = viol;
      best.feasible = feasible;
      best.hit_iteration_cap = !res.converged;
      have_best = true;
    }
    if (feasible) break;

    for (std::size_t i = 0; i < c.size(); ++i) lambda[i] = std::max(0.0, lambda[i] + rho * c[i]);
    if (viol > 0.25 * prev_viol) rho *= options.penalty_growth;
    prev_viol = viol;
  }

  best.iterations = out.iterations;
  best.outer_iterations = out.outer_iterations;
  best.merit_monotone = out.merit_monotone;
  if (!best.feasible && best.outer_iterations >= options.max_outer) best.hit_iteration_cap = true;
  best.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return best;
}

PolicyState::PolicyState(GPStateSpace model_in, OCPSpec spec_in, Matrix backoffs_in, VariantFlags variant_in,
                         SolverOptions solver_in)
    : model(std::move(model_in)),
      spec(std::move(spec_in)),
      backoffs(std::move(backoffs_in)),
      variant(variant_in),
      solver(solver_in) {
  if (backoffs.empty()) backoffs = Matrix(spec.horizon + 1, spec.constraints.size());
}

Vector policy_kappa(PolicyState& state, std::span<const double> x_t, int t) {
  if (t < 0 || t >= state.spec.horizon) throw DomainError("policy_kappa: t must lie in [0, T)");
  SolveResult sol;
  try {
    if (state.variant.learning && t > 0 && state.prev_x && state.prev_u)
      state.model = state.model.condition_all(*state.prev_x, *state.prev_u, x_t, false);
    const Matrix* warm = state.warm_start ? &*state.warm_start : nullptr;
    sol = solve_ocp(state.model, state.spec, state.backoffs, x_t, t, state.prev_u, warm, state.solver);
  } catch (const PolicyFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw PolicyFailure(t, e.what());
  }
  Vector u(sol.controls.row(0).begin(), sol.controls.row(0).end());
  state.prev_u = u;
  state.prev_x = Vector(x_t.begin(), x_t.end());
  if (sol.controls.rows() > 1) {
    Matrix shifted(sol.controls.rows() - 1, sol.controls.cols());
    for (std::size_t k = 1; k < sol.controls.rows(); ++k)
      std::copy(sol.controls.row(k).begin(), sol.controls.row(k).end(), shifted.row(k - 1).begin());
    state.warm_start = std::move(shifted);
  } else {
    state.warm_start.reset();
  }
  state.diagnostics.push_back({t, sol.iterations, sol.objective, sol.max_violation, sol.wall_seconds});
  return u;
}

}  // namespace gpmpc
