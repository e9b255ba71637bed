#include "gpmpc/mc_sampler.hpp"

#include <cmath>
#include <exception>
#include <optional>

#include "gpmpc/errors.hpp"
#include "gpmpc/special.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gpmpc {

GPNMPCSampler::GPNMPCSampler(GPStateSpace model, OCPSpec spec, VariantFlags variant, SolverOptions solver,
                             Vector x0_mean, Vector x0_cov_diag)
    : model_(std::move(model)),
      spec_(std::move(spec)),
      variant_(variant),
      solver_(solver),
      x0_mean_(std::move(x0_mean)),
      x0_cov_diag_(std::move(x0_cov_diag)) {
  if (x0_mean_.size() != model_.state_dim() || x0_cov_diag_.size() != model_.state_dim())
    throw DimensionMismatch("GPNMPCSampler: initial-condition dimension mismatch");
}

PolicyState GPNMPCSampler::fresh_policy(const Matrix& backoffs) const {
  PolicyState ps(model_, spec_, backoffs, variant_, solver_);
  if (!initial_guess_.empty()) ps.warm_start = initial_guess_;
  return ps;
}

void GPNMPCSampler::prepare(const Matrix& backoffs) {
  initial_guess_ = Matrix();
  try {
    initial_guess_ =
        solve_ocp(model_, spec_, backoffs, x0_mean_, 0, std::nullopt, nullptr, solver_).controls;
  } catch (const Error&) {
    // Samples fall back to a cold start.
  }
}

SampleOutcome GPNMPCSampler::sample(const Matrix& backoffs, RngStream& rng) const {
  PolicyState ps = fresh_policy(backoffs);
  const Policy policy = [&ps](std::span<const double> x, int t) { return policy_kappa(ps, x, t); };
  SampleOutcome out;
  out.trajectory =
      sample_trajectory(model_, policy, x0_mean_, DiagonalCovariance{x0_cov_diag_}, spec_.horizon, rng);
  out.constraints = evaluate_constraints(spec_.constraints, out.trajectory.states);
  return out;
}

Matrix GPNMPCSampler::nominal(const Matrix& backoffs) const {
  PolicyState ps = fresh_policy(backoffs);
  const Policy policy = [&ps](std::span<const double> x, int t) { return policy_kappa(ps, x, t); };
  const Trajectory traj = nominal_trajectory(model_, policy, x0_mean_, spec_.horizon);
  return evaluate_constraints(spec_.constraints, traj.states);
}

LinearGaussianSampler::LinearGaussianSampler(int horizon, double sigma, double x_max, double g0)
    : horizon_(horizon), sigma_(sigma), x_max_(x_max), g0_(g0) {
  if (horizon < 1) throw DomainError("LinearGaussianSampler: horizon must be >= 1");
  if (!(sigma >= 0.0)) throw DomainError("LinearGaussianSampler: sigma must be >= 0");
}

SampleOutcome LinearGaussianSampler::sample(const Matrix& backoffs, RngStream& rng) const {
  SampleOutcome out;
  out.trajectory.states = Matrix(horizon_ + 1, 1);
  out.trajectory.controls = Matrix(horizon_, 1);
  out.constraints = Matrix(horizon_ + 1, 1);
  out.trajectory.states(0, 0) = x_max_ + g0_;
  out.constraints(0, 0) = g0_;
  for (int t = 1; t <= horizon_; ++t) {
    const double b = backoffs.empty() ? 0.0 : backoffs(t, 0);
    const double target = x_max_ - b;
    const double x = target + sigma_ * rng.normal();
    out.trajectory.controls(t - 1, 0) = target;
    out.trajectory.states(t, 0) = x;
    out.constraints(t, 0) = x - x_max_;
  }
  return out;
}

Matrix LinearGaussianSampler::nominal(const Matrix& backoffs) const {
  Matrix g(horizon_ + 1, 1);
  g(0, 0) = g0_;
  for (int t = 1; t <= horizon_; ++t) g(t, 0) = backoffs.empty() ? 0.0 : -backoffs(t, 0);
  return g;
}

double LinearGaussianSampler::satisfaction_probability(const Matrix& backoffs) const {
  if (g0_ > 0.0) return 0.0;
  double p = 1.0;
  for (int t = 1; t <= horizon_; ++t) {
    const double b = backoffs.empty() ? 0.0 : backoffs(t, 0);
    p *= sigma_ > 0.0 ? normal_cdf(b / sigma_) : (b >= 0.0 ? 1.0 : 0.0);
  }
  return p;
}

void parallel_for_indexed(std::size_t n, const std::function<void(std::size_t)>& fn, Execution execution,
                          int workers) {
  std::vector<std::exception_ptr> errors(n);
  if (execution == Execution::Serial) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
#ifdef _OPENMP
    const int threads = workers > 0 ? workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
      try {
        fn(static_cast<std::size_t>(i));
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
#else
    (void)workers;
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
#endif
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

BatchResult run_batch(const ClosedLoopSampler& sampler, const Matrix& backoffs, std::uint64_t seed,
                      std::span<const std::uint64_t> stream_ids, std::uint64_t replacement_base,
                      const BatchOptions& options) {
  const std::size_t n = stream_ids.size();
  BatchResult res;
  res.outcomes.resize(n);
  res.stream_ids.assign(stream_ids.begin(), stream_ids.end());
  const int budget = static_cast<int>(std::floor(options.replacement_budget * static_cast<double>(n) + 1e-9));

  std::vector<std::size_t> pending(n);
  for (std::size_t i = 0; i < n; ++i) pending[i] = i;
  std::uint64_t next_replacement = replacement_base;

  while (!pending.empty()) {
    std::vector<std::optional<std::string>> failed(pending.size());
    parallel_for_indexed(
        pending.size(),
        [&](std::size_t k) {
          const std::size_t slot = pending[k];
          RngStream rng(seed, res.stream_ids[slot]);
          try {
            res.outcomes[slot] = sampler.sample(backoffs, rng);
            res.outcomes[slot].trajectory.sample_id = static_cast<std::int64_t>(slot);
          } catch (const Error& e) {
            failed[k] = e.what();
          }
        },
        options.execution, options.workers);

    std::vector<std::size_t> retry;
    for (std::size_t k = 0; k < pending.size(); ++k) {
      if (!failed[k]) continue;
      const std::size_t slot = pending[k];
      res.failures.push_back("stream " + std::to_string(res.stream_ids[slot]) + ": " + *failed[k]);
      if (++res.replaced > budget)
        throw Error("run_batch: " + std::to_string(res.replaced) + " failed samples exceed the replacement budget of " +
                    std::to_string(budget) + "; last failure: " + *failed[k]);
      res.stream_ids[slot] = next_replacement++;
      retry.push_back(slot);
    }
    pending = std::move(retry);
  }
  return res;
}

}  // namespace gpmpc
