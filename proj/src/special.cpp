#include "gpmpc/special.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "gpmpc/errors.hpp"

namespace gpmpc {

namespace {

constexpr double kTiny = 1e-300;
constexpr double kCfEps = 1e-16;
constexpr int kCfMaxIter = 100000;
constexpr int kInvMaxIter = 200;

// Continued fraction for I_x(a, b) (Numerical Recipes form), modified Lentz.
double beta_continued_fraction(double x, double a, double b) {
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kCfMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) <= kCfEps) return h;
  }
  throw ConvergenceFailure("reg_inc_beta: continued fraction did not converge");
}

void check_shape(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b))
    throw DomainError("beta shape parameters must be positive and finite");
}

}  // namespace

double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

double reg_inc_beta(double x, double a, double b) {
  check_shape(a, b);
  if (!(x >= 0.0 && x <= 1.0)) throw DomainError("reg_inc_beta: x outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = a * std::log(x) + b * std::log1p(-x) - log_beta(a, b);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::exp(log_front) * beta_continued_fraction(x, a, b) / a;
  }
  return 1.0 - std::exp(log_front) * beta_continued_fraction(1.0 - x, b, a) / b;
}

double beta_pdf(double x, double a, double b) {
  check_shape(a, b);
  if (x < 0.0 || x > 1.0) return 0.0;
  if (x == 0.0) return a < 1.0 ? std::numeric_limits<double>::infinity() : (a == 1.0 ? b : 0.0);
  if (x == 1.0) return b < 1.0 ? std::numeric_limits<double>::infinity() : (b == 1.0 ? a : 0.0);
  return std::exp((a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta(a, b));
}

double betainv(double p, double a, double b) {
  check_shape(a, b);
  if (!(p > 0.0 && p < 1.0)) throw DomainError("betainv: p must lie in (0, 1)");

  double lo = 0.0;
  double hi = 1.0;
  double x = a / (a + b);
  for (int iter = 0; iter < kInvMaxIter; ++iter) {
    const double f = reg_inc_beta(x, a, b) - p;
    if (f == 0.0) return x;
    if (f < 0.0) {
      lo = x;
    } else {
      hi = x;
    }
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(hi, 1e-300)) return x;
    if (std::abs(f) <= 1e-15 * std::min(p, 1.0 - p)) return x;

    const double pdf = beta_pdf(x, a, b);
    double next = (pdf > 0.0 && std::isfinite(pdf)) ? x - f / pdf : std::numeric_limits<double>::quiet_NaN();
    // Fall back to bisection whenever Newton leaves the bracket or stalls.
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == x) return x;
    x = next;
  }
  throw ConvergenceFailure("betainv: no convergence in " + std::to_string(kInvMaxIter) +
                           " iterations (a=" + std::to_string(a) + ", b=" + std::to_string(b) + ")");
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace gpmpc
