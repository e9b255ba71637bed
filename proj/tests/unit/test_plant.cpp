#include <gtest/gtest.h>

#include <boost/numeric/odeint.hpp>
#include <cmath>

#include "gpmpc/errors.hpp"
#include "gpmpc/plant.hpp"

using namespace gpmpc;

namespace {

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1e-12, std::max(std::abs(a), std::abs(b))); }

// Independent integration with an adaptive Dormand-Prince stepper at tight
// tolerances. The right-hand side is re-typed here from the balance equations.
std::array<double, 3> adaptive_reference(std::array<double, 3> x, double light, double feed, double hours) {
  using State = std::array<double, 3>;
  const BioreactorParams p;
  auto f = [&](const State& s, State& ds, double) {
    const double cx = std::max(s[0], 0.0), cn = std::max(s[1], 0.0), cq = std::max(s[2], 0.0);
    const double mu = p.u_m * light / (light + p.k_s + light * light / p.k_i) * cx * cn / (cn + p.K_N);
    ds[0] = mu - p.u_d * cx;
    ds[1] = -p.Y_NX * mu + feed;
    ds[2] = p.k_m * light / (light + p.k_sq + light * light / p.k_iq) * cx - p.k_d * cq / (cn + p.K_Np);
  };
  namespace ode = boost::numeric::odeint;
  ode::integrate_adaptive(ode::make_controlled(1e-13, 1e-13, ode::runge_kutta_dopri5<State>()), f, x, 0.0, hours,
                          0.01);
  return x;
}

}  // namespace

TEST(Rhs, NoBiomassOnlyFeedMoves) {
  const auto d = rhs(Vector{0.0, 321.0, 0.0}, Vector{250.0, 17.5});
  EXPECT_EQ(d[0], 0.0);
  EXPECT_EQ(d[1], 17.5);
  EXPECT_EQ(d[2], 0.0);
}

TEST(Rhs, HandEvaluation) {
  const auto d = rhs(Vector{1.0, 150.0, 0.0}, Vector{200.0, 0.0});
  const double light = 200.0 / (200.0 + 178.9 + 200.0 * 200.0 / 447.1);
  const double growth = 0.0572 * light * 1.0 * (150.0 / (150.0 + 393.1));
  EXPECT_NEAR(d[0], growth, 1e-15);
  EXPECT_NEAR(d[1], -504.5 * growth, 1e-12);
  const double prod = 0.00016 * 200.0 / (200.0 + 23.51 + 200.0 * 200.0 / 800.0);
  EXPECT_NEAR(d[2], prod, 1e-18);
}

TEST(Rhs, FeedIsAdditiveAndNegativeStatesClamp) {
  const Vector x{2.0, 300.0, 0.05};
  const auto a = rhs(x, Vector{250.0, 0.0});
  const auto b = rhs(x, Vector{250.0, 12.0});
  EXPECT_EQ(a[0], b[0]);
  EXPECT_DOUBLE_EQ(b[1] - a[1], 12.0);
  EXPECT_EQ(a[2], b[2]);
  const auto c = rhs(Vector{-1.0, 300.0, -0.1}, Vector{250.0, 3.0});
  EXPECT_EQ(c[0], 0.0);
  EXPECT_EQ(c[1], 3.0);
  EXPECT_EQ(c[2], 0.0);
}

TEST(Step, SmallDtMatchesRhs) {
  const Vector x{1.5, 250.0, 0.02}, u{300.0, 10.0};
  const auto d = rhs(x, u);
  const Vector s = step(x, u, 1e-6, {}, 1);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR((s[i] - x[i]) / 1e-6, d[i], 1e-9 * std::max(1.0, std::abs(d[i])) + 1e-6);
}

TEST(Step, StepHalvingConverges) {
  RngStream rng(11, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x{20.0 * rng.uniform(), 50.0 + 750.0 * rng.uniform(), 0.18 * rng.uniform()};
    const Vector u{120.0 + 280.0 * rng.uniform(), 40.0 * rng.uniform()};
    const Vector a = step(x, u, 20.0, {}, 400);
    const Vector b = step(x, u, 20.0, {}, 800);
    for (int i = 0; i < 3; ++i) EXPECT_LE(std::abs(a[i] - b[i]), 1e-6 * std::max(std::abs(b[i]), 1e-3)) << i;
  }
}

TEST(Step, MatchesAdaptiveIntegrator) {
  const Vector s = step(Vector{1.0, 150.0, 0.0}, Vector{300.0, 20.0});
  const auto ref = adaptive_reference({1.0, 150.0, 0.0}, 300.0, 20.0, 20.0);
  for (int i = 0; i < 3; ++i) EXPECT_LE(rel_diff(s[i], ref[i]), 1e-5) << i;
  EXPECT_NEAR(s[0], 1.2378, 1e-4);
  EXPECT_NEAR(s[1], 430.01, 1e-2);

  RngStream rng(12, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const std::array<double, 3> x{20.0 * rng.uniform(), 50.0 + 750.0 * rng.uniform(), 0.18 * rng.uniform()};
    const double light = 120.0 + 280.0 * rng.uniform(), feed = 40.0 * rng.uniform();
    const Vector a = step(x, Vector{light, feed});
    const auto r = adaptive_reference(x, light, feed, 20.0);
    // Nitrate can be driven to exactly zero, where the clamp makes the
    // comparison absolute rather than relative.
    for (int i = 0; i < 3; ++i) EXPECT_LE(std::abs(a[i] - r[i]), 1e-5 * std::max(std::abs(r[i]), 1e-2)) << i;
  }
}

TEST(Step, ErrorsAndDeterminism) {
  const Vector x{1.0, 150.0, 0.0}, u{300.0, 20.0};
  EXPECT_THROW(step(x, u, 0.0), DomainError);
  EXPECT_THROW(step(x, u, 20.0, {}, 0), DomainError);
  EXPECT_THROW(step(Vector{1.0, 2.0}, u), DimensionMismatch);
  EXPECT_THROW(step(Vector{1e10, 150.0, 0.0}, u), NonFinite);
  EXPECT_EQ(step(x, u), step(x, u));
}

TEST(Step, MonotoneBiomassAndNitrate) {
  RngStream rng(13, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector x{0.1 + 19.9 * rng.uniform(), 50.0 + 750.0 * rng.uniform(), 0.18 * rng.uniform()};
    const double light = 120.0 + 280.0 * rng.uniform();
    const Vector fed = step(x, Vector{light, 40.0 * rng.uniform()});
    EXPECT_GE(fed[0], x[0]);
    const Vector starved = step(x, Vector{light, 0.0});
    EXPECT_LE(starved[1], x[1]);
    for (double v : starved) EXPECT_GE(v, 0.0);
  }
}

TEST(Noise, ZeroNoiseIsExact) {
  const Vector x{1.0, 150.0, 0.0}, u{300.0, 20.0};
  RngStream rng(1, 0);
  EXPECT_EQ(plant_transition(x, u, NoiseSpec::zero(), rng), step(x, u));
  EXPECT_EQ(measure(x, NoiseSpec::zero(), rng), x);
  RngStream a(4, 2), b(4, 2);
  EXPECT_EQ(plant_transition(x, u, NoiseSpec{}, a), plant_transition(x, u, NoiseSpec{}, b));
}

TEST(Noise, DisturbanceAndMeasurementVariances) {
  const NoiseSpec noise;
  const Vector x{5.0, 400.0, 0.1}, u{300.0, 20.0};
  const Vector base = step(x, u);
  const int n = 10000;
  Vector s_w(3), ss_w(3), s_v(3), ss_v(3);
  RngStream rng(21, 0);
  for (int k = 0; k < n; ++k) {
    const Vector w = plant_transition(x, u, noise, rng);
    const Vector v = measure(x, noise, rng);
    for (int i = 0; i < 3; ++i) {
      s_w[i] += w[i] - base[i];
      ss_w[i] += (w[i] - base[i]) * (w[i] - base[i]);
      s_v[i] += v[i] - x[i];
      ss_v[i] += (v[i] - x[i]) * (v[i] - x[i]);
    }
  }
  for (int i = 0; i < 3; ++i) {
    const double var_w = noise.sigma_omega_diag[i], var_v = noise.sigma_nu_diag[i];
    EXPECT_LE(std::abs(s_w[i] / n), 4.0 * std::sqrt(var_w / n));
    EXPECT_LE(std::abs(ss_w[i] / n - var_w), 4.0 * var_w * std::sqrt(2.0 / n));
    EXPECT_LE(std::abs(s_v[i] / n), 4.0 * std::sqrt(var_v / n));
    EXPECT_LE(std::abs(ss_v[i] / n - var_v), 4.0 * var_v * std::sqrt(2.0 / n));
  }
  EXPECT_DOUBLE_EQ(std::sqrt(noise.sigma_nu_diag[2]), 1e-4);
}

TEST(Noise, DisturbedStatesClampAtZero) {
  NoiseSpec noise = NoiseSpec::zero();
  noise.sigma_omega_diag = {1e4, 1e4, 1e4};
  RngStream rng(2, 0);
  for (int k = 0; k < 100; ++k)
    for (double v : plant_transition(Vector{0.0, 0.0, 0.0}, Vector{120.0, 0.0}, noise, rng)) EXPECT_GE(v, 0.0);
}

TEST(DatasetType1, BoxAndNoiseFreeTargets) {
  RngStream rng(3, 0);
  const Dataset ds = generate_dataset_type1(100, NoiseSpec::zero(), rng);
  ASSERT_EQ(ds.z.rows(), 100u);
  ASSERT_EQ(ds.z.cols(), 5u);
  ASSERT_EQ(ds.y.cols(), 3u);
  EXPECT_EQ(ds.type, 1);
  for (std::size_t i = 0; i < 100; ++i) {
    for (std::size_t d = 0; d < 5; ++d) {
      EXPECT_GE(ds.z(i, d), kType1Lower[d]);
      EXPECT_LE(ds.z(i, d), kType1Upper[d]);
    }
    const auto zi = ds.z.row(i);
    const Vector expect = step(zi.subspan(0, 3), zi.subspan(3, 2));
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(ds.y(i, j), expect[j]);
  }
}

TEST(DatasetType1, ReproducibleAndSizes) {
  for (int n : {50, 60, 100}) {
    RngStream a(9, 0), b(9, 0);
    const Dataset da = generate_dataset_type1(n, NoiseSpec{}, a);
    const Dataset db = generate_dataset_type1(n, NoiseSpec{}, b);
    EXPECT_EQ(da.z, db.z);
    EXPECT_EQ(da.y, db.y);
    EXPECT_EQ(da.z.rows(), static_cast<std::size_t>(n));
  }
  RngStream rng(9, 0);
  EXPECT_THROW(generate_dataset_type1(0, NoiseSpec{}, rng), DomainError);
}

TEST(DatasetType2, CountsControlsAndChain) {
  RngStream rng(4, 0);
  const Dataset ds = generate_dataset_type2(50, 12, NoiseSpec::zero(), rng);
  EXPECT_EQ(ds.type, 2);
  EXPECT_EQ(ds.trajectories, 5);
  ASSERT_EQ(ds.z.rows(), 50u);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_GE(ds.z(i, 3), 120.0);
    EXPECT_LE(ds.z(i, 3), 400.0);
    EXPECT_GE(ds.z(i, 4), 0.0);
    EXPECT_LE(ds.z(i, 4), 40.0);
    const auto zi = ds.z.row(i);
    const Vector expect = step(zi.subspan(0, 3), zi.subspan(3, 2));
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(ds.y(i, j), expect[j]);
  }
  for (std::size_t i = 0; i + 1 < 50; ++i) {
    if ((i + 1) % 12 == 0) {
      // Each run starts from the initial-condition mean under zero noise.
      EXPECT_EQ(ds.z(i + 1, 0), 1.0);
      EXPECT_EQ(ds.z(i + 1, 1), 150.0);
      continue;
    }
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(ds.z(i + 1, j), ds.y(i, j));
  }
}

TEST(DatasetType2, NoisyInitialStatesAndErrors) {
  RngStream rng(4, 0);
  const Dataset ds = generate_dataset_type2(60, 12, NoiseSpec{}, rng);
  EXPECT_EQ(ds.trajectories, 5);
  EXPECT_NE(ds.z(0, 1), ds.z(12, 1));
  EXPECT_EQ(ds.z(0, 2), 0.0);
  RngStream r2(4, 0);
  EXPECT_THROW(generate_dataset_type2(10, 12, NoiseSpec{}, r2), DomainError);
}
