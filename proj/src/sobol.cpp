#include "gpmpc/sobol.hpp"

#include <array>
#include <bit>
#include <string>

#include "gpmpc/errors.hpp"

namespace gpmpc {

namespace {

struct PrimitivePoly {
  unsigned degree;
  std::uint32_t coeffs;  // interior coefficients a
  std::array<std::uint32_t, 5> m;
};

// new-joe-kuo-6.21201, dimensions 2..8. Dimension 1 is the van der Corput sequence.
constexpr std::array<PrimitivePoly, 7> kPolys = {{
    {1, 0, {1, 0, 0, 0, 0}},
    {2, 1, {1, 3, 0, 0, 0}},
    {3, 1, {1, 3, 1, 0, 0}},
    {3, 2, {1, 1, 1, 0, 0}},
    {4, 1, {1, 1, 3, 3, 0}},
    {4, 4, {1, 3, 5, 13, 0}},
    {5, 2, {1, 1, 5, 5, 17}},
}};

constexpr unsigned kBits = 32;

}  // namespace

SobolSequence::SobolSequence(std::size_t dimension) : dim_(dimension), directions_(dimension), state_(dimension, 0) {
  if (dimension == 0 || dimension > kMaxDimension)
    throw DimensionUnsupported("sobol: dimension " + std::to_string(dimension) + " outside 1..8");

  for (unsigned bit = 0; bit < kBits; ++bit) directions_[0][bit] = 1u << (kBits - 1 - bit);

  for (std::size_t j = 1; j < dim_; ++j) {
    const PrimitivePoly& p = kPolys[j - 1];
    auto& v = directions_[j];
    const unsigned s = p.degree;
    for (unsigned i = 0; i < s && i < kBits; ++i) v[i] = p.m[i] << (kBits - 1 - i);
    for (unsigned i = s; i < kBits; ++i) {
      std::uint32_t value = v[i - s] ^ (v[i - s] >> s);
      for (unsigned k = 1; k < s; ++k) {
        if ((p.coeffs >> (s - 1 - k)) & 1u) value ^= v[i - k];
      }
      v[i] = value;
    }
  }
}

Vector SobolSequence::next() {
  // Gray-code step: flip the direction number of the lowest zero bit of index_.
  const unsigned c = static_cast<unsigned>(std::countr_one(index_));
  if (c >= kBits) throw DimensionUnsupported("sobol: sequence exhausted (2^32 points)");
  ++index_;
  Vector point(dim_);
  for (std::size_t j = 0; j < dim_; ++j) {
    state_[j] ^= directions_[j][c];
    point[j] = static_cast<double>(state_[j]) * 0x1.0p-32;
  }
  return point;
}

void SobolSequence::discard(std::uint64_t n) {
  for (std::uint64_t i = 0; i < n; ++i) (void)next();
}

Matrix sobol(std::size_t n, std::size_t d, std::span<const double> lower, std::span<const double> upper) {
  if (lower.size() != d || upper.size() != d) throw DimensionMismatch("sobol: bounds do not match dimension");
  for (std::size_t j = 0; j < d; ++j)
    if (!(lower[j] < upper[j])) throw DomainError("sobol: lower bound must be below upper bound");
  SobolSequence seq(d);
  Matrix out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector p = seq.next();
    for (std::size_t j = 0; j < d; ++j) out(i, j) = lower[j] + p[j] * (upper[j] - lower[j]);
  }
  return out;
}

}  // namespace gpmpc
