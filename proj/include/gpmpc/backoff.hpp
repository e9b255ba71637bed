#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gpmpc/matrix.hpp"
#include "gpmpc/mc_sampler.hpp"

namespace gpmpc {

/// max over (j, t) of g_j^(t): <= 0 exactly when every constraint holds.
double joint_satisfaction_stat(const Matrix& constraints);

/// Fraction of statistics <= 0. Throws EmptySample when empty.
double ecdf_joint(std::span<const double> stats);

/// Clopper-Pearson lower confidence bound betainv(alpha, S b, S - S b + 1)
/// with the closed forms 0 (beta_hat = 0) and alpha^(1/S) (beta_hat = 1).
/// S * beta_hat must be an integer within 1e-9; throws DomainError otherwise.
double clopper_lower(double beta_hat, int samples, double alpha);

/// Per (t, j): the (1 - delta) lower ecdf quantile of the sampled values
/// minus the nominal value, floored at 0. Row t = 0 is always 0.
Matrix initial_backoffs(std::span<const Matrix> samples, const Matrix& nominal, double delta);

struct BackoffTable {
  Matrix b;        ///< (T + 1) x n_g
  Matrix b_tilde;  ///< frozen initial back-offs
  double gamma = 0.0;

  static BackoffTable scaled(const Matrix& b_tilde, double gamma);
};

struct BisectionRecord {
  int iteration = 0;  ///< 0 is the zero-back-off run
  double gamma = 0.0;
  double beta_hat = 0.0;
  double beta_lb = 0.0;
  double h = 0.0;
  double bracket_lower = 0.0;  ///< bracket after this iteration's update
  double bracket_upper = 0.0;
  int replaced = 0;            ///< failed samples re-drawn in this iteration
};

struct BackoffSettings {
  double epsilon = 0.1;
  double alpha = 0.01;
  double delta = 0.1;
  int samples = 1000;
  int iterations = 16;        ///< bisection iterations n_b
  double gamma_upper = 2.5;   ///< initial upper bracket b_gamma
  bool frozen_seeds = true;   ///< reuse sample streams across iterations
  std::uint64_t seed = 0;
  BatchOptions batch;
};

struct BackoffRunReport {
  BackoffSettings settings;
  std::vector<BisectionRecord> records;
  BackoffTable table;
  double beta_hat = 0.0;  ///< of the iteration that produced `table`
  double beta_lb = 0.0;
  double h = 0.0;
  bool converged = false;
  /// h(0) >= 0: the zero-back-off controller already meets the target.
  bool no_sign_change = false;
};

/// Observer called after each iteration with its record and sample batch.
using IterationObserver = std::function<void(const BisectionRecord&, const BatchResult&)>;

/// Back-off search: iteration 0 runs the sampler with b = 0, fixes b_tilde
/// from the ecdf quantiles and evaluates h(0) = beta_lb - (1 - epsilon); each
/// of the n_b bisection iterations then sets b = c b_tilde at the bracket
/// midpoint c, re-samples and moves the bracket end whose h has the same
/// sign (h >= 0 counts as positive). The returned table is the smallest
/// evaluated gamma with h >= 0 (converged), else the last iterate. When
/// h(0) >= 0 the report carries b = 0 and no_sign_change.
BackoffRunReport run_backoff_iterations(const BackoffSettings& settings, ClosedLoopSampler& sampler,
                                        const IterationObserver& observer = {});

}  // namespace gpmpc
