#include "gpmpc/backoff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gpmpc/errors.hpp"
#include "gpmpc/special.hpp"
#include "gpmpc/stats.hpp"

namespace gpmpc {

double joint_satisfaction_stat(const Matrix& constraints) {
  if (constraints.empty()) throw EmptySample("joint_satisfaction_stat: empty constraint table");
  const auto v = constraints.values();
  return *std::max_element(v.begin(), v.end());
}

double ecdf_joint(std::span<const double> stats) {
  if (stats.empty()) throw EmptySample("ecdf_joint: no samples");
  const auto ok = std::count_if(stats.begin(), stats.end(), [](double s) { return s <= 0.0; });
  return static_cast<double>(ok) / static_cast<double>(stats.size());
}

double clopper_lower(double beta_hat, int samples, double alpha) {
  if (samples < 1) throw DomainError("clopper_lower: S must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("clopper_lower: alpha must lie in (0, 1)");
  if (!(beta_hat >= 0.0 && beta_hat <= 1.0)) throw DomainError("clopper_lower: beta_hat must lie in [0, 1]");
  const double s = static_cast<double>(samples);
  const double k = s * beta_hat;
  const double k_round = std::round(k);
  if (std::abs(k - k_round) > 1e-9 * std::max(1.0, s))
    throw DomainError("clopper_lower: S * beta_hat is not an integer count");
  if (k_round <= 0.0) return 0.0;
  if (k_round >= s) return std::pow(alpha, 1.0 / s);
  return betainv(alpha, k_round, s - k_round + 1.0);
}

Matrix initial_backoffs(std::span<const Matrix> samples, const Matrix& nominal, double delta) {
  if (samples.empty()) throw EmptySample("initial_backoffs: no samples");
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("initial_backoffs: delta must lie in (0, 1)");
  const std::size_t rows = nominal.rows();
  const std::size_t cols = nominal.cols();
  for (const auto& s : samples)
    if (s.rows() != rows || s.cols() != cols) throw DimensionMismatch("initial_backoffs: sample table shape");

  Matrix b(rows, cols);
  Vector column(samples.size());
  for (std::size_t t = 1; t < rows; ++t) {
    for (std::size_t j = 0; j < cols; ++j) {
      for (std::size_t s = 0; s < samples.size(); ++s) column[s] = samples[s](t, j);
      b(t, j) = std::max(0.0, ecdf_quantile(column, 1.0 - delta) - nominal(t, j));
    }
  }
  return b;
}

BackoffTable BackoffTable::scaled(const Matrix& b_tilde, double gamma) {
  BackoffTable table{gamma * b_tilde, b_tilde, gamma};
  return table;
}

namespace {

struct Evaluation {
  BatchResult batch;
  double beta_hat = 0.0;
  double beta_lb = 0.0;
};

Evaluation evaluate(ClosedLoopSampler& sampler, const Matrix& backoffs, const BackoffSettings& st, int iteration) {
  const std::size_t n = static_cast<std::size_t>(st.samples);
  const std::uint64_t offset = st.frozen_seeds ? 0 : (static_cast<std::uint64_t>(iteration) << 32);
  std::vector<std::uint64_t> ids(n);
  std::iota(ids.begin(), ids.end(), offset);
  const std::uint64_t replacement_base = (std::uint64_t{1} << 48) + offset;

  sampler.prepare(backoffs);
  Evaluation ev;
  ev.batch = run_batch(sampler, backoffs, st.seed, ids, replacement_base, st.batch);
  Vector stats(n);
  for (std::size_t i = 0; i < n; ++i) stats[i] = joint_satisfaction_stat(ev.batch.outcomes[i].constraints);
  ev.beta_hat = ecdf_joint(stats);
  ev.beta_lb = clopper_lower(ev.beta_hat, st.samples, st.alpha);
  return ev;
}

}  // namespace

BackoffRunReport run_backoff_iterations(const BackoffSettings& st, ClosedLoopSampler& sampler,
                                        const IterationObserver& observer) {
  if (st.samples < 1) throw DomainError("run_backoff_iterations: S must be >= 1");
  if (st.iterations < 0) throw DomainError("run_backoff_iterations: n_b must be >= 0");
  if (!(st.gamma_upper > 0.0)) throw DomainError("run_backoff_iterations: gamma_upper must be positive");

  const std::size_t rows = static_cast<std::size_t>(sampler.horizon() + 1);
  const std::size_t cols = sampler.num_constraints();
  const Matrix zero(rows, cols);
  const double target = 1.0 - st.epsilon;

  BackoffRunReport report;
  report.settings = st;

  Evaluation ev0 = evaluate(sampler, zero, st, 0);
  std::vector<Matrix> tables;
  tables.reserve(ev0.batch.outcomes.size());
  for (const auto& o : ev0.batch.outcomes) tables.push_back(o.constraints);
  const Matrix b_tilde = initial_backoffs(tables, sampler.nominal(zero), st.delta);

  double a = 0.0;
  double b = st.gamma_upper;
  double h_a = ev0.beta_lb - target;
  BisectionRecord r0{0, 0.0, ev0.beta_hat, ev0.beta_lb, h_a, a, b, ev0.batch.replaced};
  report.records.push_back(r0);
  if (observer) observer(r0, ev0.batch);

  report.table = BackoffTable::scaled(b_tilde, 0.0);
  report.beta_hat = ev0.beta_hat;
  report.beta_lb = ev0.beta_lb;
  report.h = h_a;
  if (h_a >= 0.0) {
    report.no_sign_change = true;
    return report;
  }

  bool have_candidate = false;
  for (int i = 1; i <= st.iterations; ++i) {
    const double c = 0.5 * (a + b);
    const BackoffTable table = BackoffTable::scaled(b_tilde, c);
    Evaluation ev = evaluate(sampler, table.b, st, i);
    const double h = ev.beta_lb - target;
    if ((h >= 0.0) == (h_a >= 0.0)) {
      a = c;
      h_a = h;
    } else {
      b = c;
    }
    BisectionRecord rec{i, c, ev.beta_hat, ev.beta_lb, h, a, b, ev.batch.replaced};
    report.records.push_back(rec);
    if (observer) observer(rec, ev.batch);

    const bool is_candidate = h >= 0.0 && (!have_candidate || c < report.table.gamma);
    const bool is_fallback = !have_candidate && h < 0.0;
    if (is_candidate || is_fallback) {
      report.table = table;
      report.beta_hat = ev.beta_hat;
      report.beta_lb = ev.beta_lb;
      report.h = h;
      have_candidate = have_candidate || h >= 0.0;
    }
  }
  report.converged = have_candidate;
  return report;
}

}  // namespace gpmpc
