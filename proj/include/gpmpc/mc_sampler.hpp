#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gpmpc/matrix.hpp"
#include "gpmpc/nmpc.hpp"
#include "gpmpc/rng.hpp"
#include "gpmpc/state_space.hpp"

namespace gpmpc {

struct SampleOutcome {
  Matrix constraints;  ///< (T + 1) x n_g
  Trajectory trajectory;
};

/// Closed-loop simulator that the back-off search draws from. `sample` must be
/// safe to call concurrently and depend only on its arguments.
class ClosedLoopSampler {
 public:
  virtual ~ClosedLoopSampler() = default;
  virtual int horizon() const = 0;
  virtual std::size_t num_constraints() const = 0;
  /// Called once per back-off table before a batch of samples.
  virtual void prepare(const Matrix& backoffs) { (void)backoffs; }
  virtual SampleOutcome sample(const Matrix& backoffs, RngStream& rng) const = 0;
  /// Constraint table of the nominal (all-means) closed loop.
  virtual Matrix nominal(const Matrix& backoffs) const = 0;
};

/// GP plant samples (exact sampling) under the GP-NMPC feedback law; every
/// sample gets a fresh PolicyState built from the unconditioned model.
class GPNMPCSampler : public ClosedLoopSampler {
 public:
  GPNMPCSampler(GPStateSpace model, OCPSpec spec, VariantFlags variant, SolverOptions solver, Vector x0_mean,
                Vector x0_cov_diag);

  int horizon() const override { return spec_.horizon; }
  std::size_t num_constraints() const override { return spec_.constraints.size(); }
  void prepare(const Matrix& backoffs) override;
  SampleOutcome sample(const Matrix& backoffs, RngStream& rng) const override;
  Matrix nominal(const Matrix& backoffs) const override;

  const GPStateSpace& model() const noexcept { return model_; }
  const OCPSpec& spec() const noexcept { return spec_; }

 private:
  PolicyState fresh_policy(const Matrix& backoffs) const;

  GPStateSpace model_;
  OCPSpec spec_;
  VariantFlags variant_;
  SolverOptions solver_;
  Vector x0_mean_;
  Vector x0_cov_diag_;
  Matrix initial_guess_;  // t = 0 solution from x0_mean for the prepared table
};

/// One-state linear-Gaussian loop with a dead-beat controller that drives the
/// state onto its tightened limit: x_{t+1} = x_max - b^(t+1) + omega_t,
/// omega ~ N(0, sigma^2), and g = x - x_max. x_0 is fixed at x_max + g0.
/// The joint satisfaction probability is prod_t Phi(b^(t) / sigma).
class LinearGaussianSampler : public ClosedLoopSampler {
 public:
  LinearGaussianSampler(int horizon, double sigma, double x_max = 0.0, double g0 = -1.0);

  int horizon() const override { return horizon_; }
  std::size_t num_constraints() const override { return 1; }
  SampleOutcome sample(const Matrix& backoffs, RngStream& rng) const override;
  Matrix nominal(const Matrix& backoffs) const override;

  double satisfaction_probability(const Matrix& backoffs) const;

 private:
  int horizon_;
  double sigma_;
  double x_max_;
  double g0_;
};

enum class Execution { Serial, Parallel };

struct BatchOptions {
  Execution execution = Execution::Parallel;
  int workers = 0;  ///< 0 uses the OpenMP default
  /// Failed samples are re-drawn with new stream ids while the total number
  /// of replacements stays within this fraction of the batch.
  double replacement_budget = 0.05;
};

struct BatchResult {
  std::vector<SampleOutcome> outcomes;     ///< ordered by request index
  std::vector<std::uint64_t> stream_ids;   ///< stream actually used per slot
  int replaced = 0;
  std::vector<std::string> failures;       ///< messages of replaced samples
};

/// Runs fn(i) for every i in [0, n). Exceptions are captured per index and
/// the one with the lowest index is rethrown after the loop.
void parallel_for_indexed(std::size_t n, const std::function<void(std::size_t)>& fn, Execution execution,
                          int workers = 0);

/// Draws one sample per requested stream id (RngStream(seed, id)). Samples
/// that throw PolicyFailure (or any library Error) are replaced in index order
/// by ids starting at `replacement_base`; exceeding the budget throws Error.
BatchResult run_batch(const ClosedLoopSampler& sampler, const Matrix& backoffs, std::uint64_t seed,
                      std::span<const std::uint64_t> stream_ids, std::uint64_t replacement_base,
                      const BatchOptions& options = {});

}  // namespace gpmpc
