#pragma once

namespace gpmpc {

/// log B(a, b).
double log_beta(double a, double b);

/// Regularized incomplete beta function I_x(a, b), i.e. the Beta(a, b) CDF.
///
/// Evaluated by the modified Lentz continued fraction, switching to
/// 1 - I_{1-x}(b, a) when x > (a + 1) / (a + b + 2). Throws DomainError unless
/// 0 <= x <= 1, a > 0 and b > 0.
double reg_inc_beta(double x, double a, double b);

/// Beta(a, b) density at x.
double beta_pdf(double x, double a, double b);

/// Inverse of reg_inc_beta in x: returns C with I_C(a, b) = p.
///
/// Newton iteration safeguarded by a shrinking bisection bracket. Requires
/// 0 < p < 1; throws ConvergenceFailure after 200 iterations.
double betainv(double p, double a, double b);

/// Standard normal CDF.
double normal_cdf(double x);

}  // namespace gpmpc
