#include <benchmark/benchmark.h>

#include <random>

#include "advdiff/sac.hpp"

using namespace advdiff;

static void BM_SacUpdate(benchmark::State& state) {
  sac::SacConfig cfg;
  cfg.hidden = {state.range(0), state.range(0)};
  cfg.batch_size = static_cast<std::size_t>(state.range(1));
  sac::SacAgent agent(5, 2, cfg, 1);
  sac::ReplayBuffer buffer(10000, 5, 2);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double o[5] = {u(rng), u(rng), u(rng), u(rng), u(rng)};
    const double o2[5] = {u(rng), u(rng), u(rng), u(rng), u(rng)};
    const double a[2] = {0.9 * u(rng), 0.9 * u(rng)};
    const double raw[2] = {std::atanh(a[0]), std::atanh(a[1])};
    buffer.add(o, a, raw, u(rng), o2, false);
  }
  for (auto _ : state) benchmark::DoNotOptimize(agent.update(buffer.sample(cfg.batch_size, agent.rng())));
}
BENCHMARK(BM_SacUpdate)->Args({64, 64})->Args({256, 256})->Unit(benchmark::kMillisecond);

static void BM_PolicyAct(benchmark::State& state) {
  sac::SacAgent agent(5, 2, sac::SacConfig{}, 1);
  const nn::Matrix obs = nn::Matrix::Constant(1, 5, 0.3);
  for (auto _ : state) benchmark::DoNotOptimize(agent.act(obs, false));
}
BENCHMARK(BM_PolicyAct);
