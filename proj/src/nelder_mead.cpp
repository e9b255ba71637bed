#include "gpmpc/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gpmpc/errors.hpp"

namespace gpmpc {

NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f, std::span<const double> x0,
                             const NelderMeadOptions& opt) {
  const std::size_t n = x0.size();
  const bool boxed = !opt.lower.empty();
  if (boxed && (opt.lower.size() != n || opt.upper.size() != n))
    throw DimensionMismatch("nelder_mead: bounds do not match dimension");

  int evals = 0;
  auto clip = [&](Vector& x) {
    if (!boxed) return;
    for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(x[i], opt.lower[i], opt.upper[i]);
  };
  auto eval = [&](Vector& x) {
    clip(x);
    ++evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Vector> simplex(n + 1, Vector(x0.begin(), x0.end()));
  std::vector<double> values(n + 1);
  values[0] = eval(simplex[0]);
  for (std::size_t i = 0; i < n; ++i) {
    Vector& v = simplex[i + 1];
    v[i] += opt.initial_step;
    if (boxed && v[i] > opt.upper[i]) v[i] = simplex[0][i] - opt.initial_step;
    values[i + 1] = eval(v);
  }

  std::vector<std::size_t> order(n + 1);
  Vector centroid(n), trial(n), trial2(n);
  bool converged = false;

  while (evals < opt.max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second_worst = order[n - 1];

    double diameter = 0.0;
    for (std::size_t i = 0; i <= n; ++i)
      for (std::size_t j = 0; j < n; ++j) diameter = std::max(diameter, std::abs(simplex[i][j] - simplex[best][j]));
    const double spread = values[worst] - values[best];
    if (std::isfinite(spread) && spread <= opt.f_tol * (1.0 + std::abs(values[best])) && diameter <= opt.x_tol) {
      converged = true;
      break;
    }

    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j];
    }
    for (auto& c : centroid) c /= static_cast<double>(n);

    for (std::size_t j = 0; j < n; ++j) trial[j] = centroid[j] + (centroid[j] - simplex[worst][j]);
    const double f_reflect = eval(trial);

    if (f_reflect < values[best]) {
      for (std::size_t j = 0; j < n; ++j) trial2[j] = centroid[j] + 2.0 * (centroid[j] - simplex[worst][j]);
      const double f_expand = eval(trial2);
      if (f_expand < f_reflect) {
        simplex[worst] = trial2;
        values[worst] = f_expand;
      } else {
        simplex[worst] = trial;
        values[worst] = f_reflect;
      }
      continue;
    }
    if (f_reflect < values[second_worst]) {
      simplex[worst] = trial;
      values[worst] = f_reflect;
      continue;
    }
    const bool outside = f_reflect < values[worst];
    for (std::size_t j = 0; j < n; ++j) {
      trial2[j] = outside ? centroid[j] + 0.5 * (trial[j] - centroid[j])
                          : centroid[j] + 0.5 * (simplex[worst][j] - centroid[j]);
    }
    const double f_contract = eval(trial2);
    if (f_contract < std::min(f_reflect, values[worst])) {
      simplex[worst] = trial2;
      values[worst] = f_contract;
      continue;
    }
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == best) continue;
      for (std::size_t j = 0; j < n; ++j) simplex[i][j] = simplex[best][j] + 0.5 * (simplex[i][j] - simplex[best][j]);
      values[i] = eval(simplex[i]);
    }
  }

  const auto best_it = std::min_element(values.begin(), values.end());
  const auto best = static_cast<std::size_t>(best_it - values.begin());
  return {simplex[best], values[best], evals, converged};
}

}  // namespace gpmpc
