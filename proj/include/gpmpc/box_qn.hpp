#pragma once

#include <functional>
#include <span>

#include "gpmpc/matrix.hpp"

namespace gpmpc {

/// Objective with gradient: returns f(x) and writes df/dx into `grad`.
using SmoothObjective = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct BoxQNOptions {
  int max_iterations = 200;
  double projected_gradient_tol = 1e-7;  ///< infinity norm of P(x - g) - x
  double f_rel_tol = 1e-12;              ///< stop after two steps with smaller relative decrease
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 30;
};

struct BoxQNResult {
  Vector x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  double projected_gradient = 0.0;
  bool converged = false;
};

/// Projected BFGS for min f(x) subject to lower <= x <= upper.
///
/// Variables at a bound whose gradient pushes outward are held fixed; the
/// rest move along -H g with H the inverse-Hessian estimate restricted to the
/// free set. Steps follow the projected path with Armijo backtracking, so f
/// never increases between accepted iterates.
BoxQNResult minimize_box(const SmoothObjective& f, std::span<const double> x0, std::span<const double> lower,
                         std::span<const double> upper, const BoxQNOptions& options = {});

}  // namespace gpmpc
