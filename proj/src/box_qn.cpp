#include "gpmpc/box_qn.hpp"

#include <algorithm>
#include <cmath>

#include "gpmpc/errors.hpp"

namespace gpmpc {

namespace {

double projected_gradient_norm(std::span<const double> x, std::span<const double> g, std::span<const double> lo,
                               std::span<const double> hi) {
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = std::clamp(x[i] - g[i], lo[i], hi[i]);
    m = std::max(m, std::abs(p - x[i]));
  }
  return m;
}

}  // namespace

BoxQNResult minimize_box(const SmoothObjective& f, std::span<const double> x0, std::span<const double> lower,
                         std::span<const double> upper, const BoxQNOptions& opt) {
  const std::size_t n = x0.size();
  if (lower.size() != n || upper.size() != n) throw DimensionMismatch("minimize_box: bound size mismatch");

  BoxQNResult res;
  Vector x(n), g(n), xt(n), gt(n), d(n), s(n), y(n), hy(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(x0[i], lower[i], upper[i]);
  double fx = f(x, g);
  ++res.evaluations;
  if (!std::isfinite(fx)) throw SolverDiverged("minimize_box: non-finite objective at the start point");

  Matrix h = Matrix::identity(n);
  bool scaled = false;
  std::vector<char> free(n);
  int stalls = 0;

  for (; res.iterations < opt.max_iterations; ++res.iterations) {
    res.projected_gradient = projected_gradient_norm(x, g, lower, upper);
    if (res.projected_gradient <= opt.projected_gradient_tol) {
      res.converged = true;
      break;
    }
    for (std::size_t i = 0; i < n; ++i)
      free[i] = !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0));

    bool accepted = false;
    double f_new = fx;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      double slope = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        d[i] = 0.0;
        if (!free[i]) continue;
        for (std::size_t j = 0; j < n; ++j)
          if (free[j]) d[i] -= h(i, j) * g[j];
        slope += g[i] * d[i];
      }
      if (!(slope < 0.0)) {
        h = Matrix::identity(n);
        scaled = false;
        for (std::size_t i = 0; i < n; ++i) d[i] = free[i] ? -g[i] : 0.0;
      }
      double dmax = 0.0;
      for (std::size_t i = 0; i < n; ++i) dmax = std::max(dmax, std::abs(d[i]) / std::max(upper[i] - lower[i], 1e-300));
      double alpha = dmax > 1.0 ? 1.0 / dmax : 1.0;

      for (int bt = 0; bt < opt.max_backtracks; ++bt, alpha *= opt.backtrack) {
        double decrease = 0.0;
        bool moved = false;
        for (std::size_t i = 0; i < n; ++i) {
          xt[i] = std::clamp(x[i] + alpha * d[i], lower[i], upper[i]);
          decrease += g[i] * (xt[i] - x[i]);
          moved = moved || xt[i] != x[i];
        }
        if (!moved || decrease >= 0.0) continue;
        const double ft = f(xt, gt);
        ++res.evaluations;
        if (std::isfinite(ft) && ft <= fx + opt.armijo_c * decrease) {
          f_new = ft;
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        h = Matrix::identity(n);
        scaled = false;
      }
    }
    if (!accepted) break;

    double sy = 0.0, yy = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = xt[i] - x[i];
      y[i] = gt[i] - g[i];
      sy += s[i] * y[i];
      yy += y[i] * y[i];
      ss += s[i] * s[i];
    }
    const double ft_prev = fx;
    x.swap(xt);
    g.swap(gt);
    fx = f_new;

    if (sy > 1e-12 * std::sqrt(ss * yy)) {
      if (!scaled) {
        h = Matrix::identity(n);
        const double gamma = sy / yy;
        for (std::size_t i = 0; i < n; ++i) h(i, i) = gamma;
        scaled = true;
      }
      // H+ = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
      const double rho = 1.0 / sy;
      for (std::size_t i = 0; i < n; ++i) {
        double v = 0.0;
        for (std::size_t j = 0; j < n; ++j) v += h(i, j) * y[j];
        hy[i] = v;
      }
      const double yhy = dot(y, hy);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          h(i, j) += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
    }

    if (ft_prev - fx <= opt.f_rel_tol * std::max(1.0, std::abs(fx))) {
      if (++stalls >= 2) {
        res.converged = true;
        ++res.iterations;
        break;
      }
    } else {
      stalls = 0;
    }
  }
  res.projected_gradient = projected_gradient_norm(x, g, lower, upper);
  res.x = std::move(x);
  res.f = fx;
  return res;
}

}  // namespace gpmpc
