#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "gpmpc/matrix.hpp"

namespace gpmpc {

/// Unscrambled Sobol sequence in up to 8 dimensions (Joe-Kuo direction
/// numbers, Gray-code ordering). The all-zeros point is skipped, so the first
/// point is (0.5, ..., 0.5).
class SobolSequence {
 public:
  static constexpr std::size_t kMaxDimension = 8;

  /// Throws DimensionUnsupported for dimension 0 or > 8.
  explicit SobolSequence(std::size_t dimension);

  std::size_t dimension() const noexcept { return dim_; }

  /// Next point in (0, 1)^d.
  Vector next();
  /// Skips `n` points.
  void discard(std::uint64_t n);

 private:
  std::size_t dim_;
  std::uint64_t index_ = 0;  // index of the last emitted point
  std::vector<std::array<std::uint32_t, 32>> directions_;
  std::vector<std::uint32_t> state_;
};

/// First `n` points of the sequence, scaled to the box [lower, upper].
Matrix sobol(std::size_t n, std::size_t d, std::span<const double> lower, std::span<const double> upper);

}  // namespace gpmpc
