// Serial reference vs OpenMP batch of Monte-Carlo closed-loop samples.
#include <benchmark/benchmark.h>

#include <numeric>

#include "gpmpc/mc_sampler.hpp"
#include "gpmpc/plant.hpp"

using namespace gpmpc;

namespace {

const GPStateSpace& model() {
  static const GPStateSpace m = [] {
    RngStream rng(5, 0);
    const Dataset ds = generate_dataset_type1(60, NoiseSpec{}, rng);
    RngStream fit_rng(5, 1);
    return fit_state_space(ds.z, ds.y, NoiseSpec{}.sigma_omega_diag, 1, fit_rng);
  }();
  return m;
}

std::vector<std::uint64_t> ids(std::size_t n) {
  std::vector<std::uint64_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void gp_nmpc_batch(benchmark::State& state, Execution ex) {
  const NoiseSpec noise;
  GPNMPCSampler s(model(), OCPSpec::bioreactor(), VariantFlags{}, SolverOptions{}, noise.x0_mean, noise.x0_cov_diag);
  const Matrix b(13, 3);
  s.prepare(b);
  const auto streams = ids(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    BatchResult r = run_batch(s, b, 1, streams, 1ull << 48, {ex, 0, 0.5});
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void linear_gaussian_batch(benchmark::State& state, Execution ex) {
  const LinearGaussianSampler s(12, 0.5);
  const auto streams = ids(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    BatchResult r = run_batch(s, Matrix(), 1, streams, 1ull << 48, {ex, 0, 0.05});
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK_CAPTURE(gp_nmpc_batch, serial, Execution::Serial)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK_CAPTURE(gp_nmpc_batch, openmp, Execution::Parallel)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK_CAPTURE(linear_gaussian_batch, serial, Execution::Serial)->Arg(10000)->UseRealTime();
BENCHMARK_CAPTURE(linear_gaussian_batch, openmp, Execution::Parallel)->Arg(10000)->UseRealTime();

BENCHMARK_MAIN();
