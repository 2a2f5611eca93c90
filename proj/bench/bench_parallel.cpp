// Serial reference kernels against their OpenMP counterparts.
#include <benchmark/benchmark.h>
#include <omp.h>

#include "chainmeld/builtin.hpp"
#include "chainmeld/pooling.hpp"
#include "chainmeld/samplers.hpp"

using namespace chainmeld;

namespace {

PoolSpec log_pool(std::vector<double> lambda) {
  PoolSpec s;
  s.method = PoolingMethod::logarithmic;
  s.weights.per_submodel = std::move(lambda);
  return s;
}

void grid(benchmark::State& state, bool parallel) {
  const auto m = builtin_gaussian_chain({});
  const PooledPrior pool(m, log_pool({0.25, 0.5, 0.25}));
  const auto n = static_cast<std::size_t>(state.range(0));
  const GridSpec spec{{-6.0, -6.0}, {6.0, 6.0}, {n, n}};
  const auto f = [&](ConstValues x) { return pool.log_density(split_blocks(x, m.phi_blocks)); };
  for (auto _ : state) {
    auto t = parallel ? grid_normalize_log_density(f, spec) : serial::grid_normalize_log_density(f, spec);
    benchmark::DoNotOptimize(t.log_mass);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n));
}

void enumeration(benchmark::State& state, bool parallel) {
  DiscreteChainParams p;
  p.k12 = 3;
  p.k23 = 3;
  p.units1 = static_cast<std::size_t>(state.range(0));
  p.units3 = 2;
  const auto m = builtin_discrete_chain(p);
  const PooledPrior pool(m, log_pool({0.5, 0.5, 0.5}));
  for (auto _ : state) {
    auto t = parallel ? enumerate_melded_posterior(m, pool) : serial::enumerate_melded_posterior(m, pool);
    benchmark::DoNotOptimize(t.probability.data());
  }
}

void chains(benchmark::State& state, bool parallel) {
  const auto m = builtin_discrete_chain({});
  const PooledPrior pool(m, log_pool({0.5, 0.5, 0.5}));
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::subprior_ends);
  RunSettings s;
  s.iterations = 20000;
  s.chains = static_cast<std::size_t>(state.range(0));
  s.seed = 1;
  const auto [s1, s3] = run_stage_one_pair(m, f, {}, {}, s, s);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(parallel ? saved : 1);
  for (auto _ : state) {
    auto out = run_parallel_stage_two(m, f, s1, s3, {}, s);
    benchmark::DoNotOptimize(out.values.data());
  }
  omp_set_num_threads(saved);
}

}  // namespace

BENCHMARK_CAPTURE(grid, serial, false)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(grid, openmp, true)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(enumeration, serial, false)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(enumeration, openmp, true)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(chains, one_thread, false)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(chains, openmp, true)->Arg(8)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
