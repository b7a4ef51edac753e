#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "asyncfl/bounds.hpp"
#include "asyncfl/jackson.hpp"
#include "asyncfl/netsim.hpp"

using namespace asyncfl;

namespace {

NetworkConfig exp_network(int n, int m) {
  NetworkConfig cfg;
  for (int i = 1; i <= n; ++i) cfg.mu.push_back(std::exp(static_cast<double>(i) / n));
  cfg.m = m;
  return cfg;
}

void BM_BuzenTable(benchmark::State& state) {
  const auto cfg = exp_network(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const auto p = RoutingVector::uniform(cfg.n());
  for (auto _ : state) benchmark::DoNotOptimize(jackson::buzen_table(cfg, p, cfg.m));
  state.SetComplexityN(state.range(0) * state.range(1));
}
BENCHMARK(BM_BuzenTable)->Args({10, 50})->Args({100, 100})->Args({100, 1000})->Args({1000, 1000});

void BM_MeansOnly(benchmark::State& state) {
  const auto cfg = exp_network(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const auto p = RoutingVector::uniform(cfg.n());
  for (auto _ : state) {
    benchmark::DoNotOptimize(jackson::stationary_moments(cfg, p, jackson::MomentDetail::MeansOnly));
  }
}
BENCHMARK(BM_MeansOnly)->Args({10, 50})->Args({100, 100})->Args({100, 1000});

void BM_FullMoments(benchmark::State& state) {
  const auto cfg = exp_network(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const auto p = RoutingVector::uniform(cfg.n());
  for (auto _ : state) benchmark::DoNotOptimize(jackson::stationary_moments(cfg, p));
}
BENCHMARK(BM_FullMoments)->Args({10, 50})->Args({100, 100})->Args({100, 1000});

void BM_GradH(benchmark::State& state) {
  const auto cfg = exp_network(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const auto p = RoutingVector::uniform(cfg.n());
  bounds::LearningParams lp;
  lp.eta = 1e-4;
  for (auto _ : state) benchmark::DoNotOptimize(bounds::grad_H(cfg, p, lp));
}
BENCHMARK(BM_GradH)->Args({10, 50})->Args({100, 100});

void BM_Simulate(benchmark::State& state) {
  netsim::SimConfig sc;
  sc.config = exp_network(static_cast<int>(state.range(0)), 20);
  sc.p = RoutingVector::uniform(sc.config.n());
  sc.horizon_rounds = state.range(1);
  for (auto _ : state) benchmark::DoNotOptimize(netsim::simulate(sc));
  state.SetItemsProcessed(state.iterations() * state.range(1));
}
BENCHMARK(BM_Simulate)->Args({10, 100000})->Args({100, 100000});

}  // namespace
BENCHMARK_MAIN();
