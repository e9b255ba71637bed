#pragma once

#include <functional>
#include <span>

#include "gpmpc/matrix.hpp"

namespace gpmpc {

struct NelderMeadOptions {
  int max_evaluations = 4000;
  double f_tol = 1e-12;  ///< spread of vertex values, relative to 1 + |f_best|
  double x_tol = 1e-9;   ///< simplex diameter (infinity norm)
  double initial_step = 0.5;
  /// Box applied to every trial point by clipping; empty means unbounded.
  Vector lower;
  Vector upper;
};

struct NelderMeadResult {
  Vector x;
  double f = 0.0;
  int evaluations = 0;
  bool converged = false;  ///< tolerances met before the evaluation cap
};

/// Downhill simplex minimization (reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5). Non-finite objective values are treated as +infinity.
NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f, std::span<const double> x0,
                             const NelderMeadOptions& options = {});

}  // namespace gpmpc
