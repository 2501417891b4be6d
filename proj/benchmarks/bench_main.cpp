#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "ahdml/estimator.hpp"
#include "ahdml/nuisance.hpp"
#include "ahdml/simgen.hpp"
#include "ahdml/survival.hpp"

using namespace ahdml;

static void BM_IsotonicProject(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<double> v(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 - static_cast<double>(i) / v.size() + noise(rng);
  for (auto _ : state) benchmark::DoNotOptimize(survival::isotonic_project(v));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_IsotonicProject)->RangeMultiplier(4)->Range(256, 16384)->Complexity();

static void BM_FitCox(benchmark::State& state) {
  const auto data = sim::sample(sim::DgmSpec::named("non-ph"), static_cast<std::size_t>(state.range(0)), 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(nuisance::fit_cox(data, nuisance::Outcome::event, true));
  }
}
BENCHMARK(BM_FitCox)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

static void BM_AhDml(benchmark::State& state) {
  const auto data = sim::sample(sim::DgmSpec::named("non-ph"), static_cast<std::size_t>(state.range(0)), 5);
  const auto plan = est::make_plan(data, 5, 11);
  for (auto _ : state) benchmark::DoNotOptimize(est::ah_dml(data, 12.0, plan));
}
BENCHMARK(BM_AhDml)->Arg(500)->Arg(1000)->Unit(benchmark::kMillisecond);

static void BM_TruthTheta(benchmark::State& state) {
  const auto spec = sim::DgmSpec::named("cross-a");
  for (auto _ : state) benchmark::DoNotOptimize(sim::truth_theta(spec, 12.0, state.range(0), 9, 1));
}
BENCHMARK(BM_TruthTheta)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
