#include <benchmark/benchmark.h>

#include "advdiff/env_agent.hpp"

using namespace advdiff;

static void BM_WorldStep(benchmark::State& state) {
  WorldConfig cfg;
  TrafficParams traffic;
  traffic.density = static_cast<double>(state.range(0)) / 4.0;
  World world = World::create(cfg, traffic, 1);
  for (auto _ : state) {
    if (world.done()) {
      state.PauseTiming();
      world = World::create(cfg, traffic, 1);
      state.ResumeTiming();
    }
    benchmark::DoNotOptimize(world.step(Control{}));
  }
  state.counters["vehicles"] = static_cast<double>(world.vehicles().size());
}
BENCHMARK(BM_WorldStep)->Arg(2)->Arg(4)->Arg(8);

static void BM_AgentEnvStep(benchmark::State& state) {
  AgentEnv env{ScenarioConfig{}};
  env.reset(1);
  std::uint64_t episode = 1;
  for (auto _ : state) {
    if (env.done()) {
      state.PauseTiming();
      env.reset(++episode);
      state.ResumeTiming();
    }
    benchmark::DoNotOptimize(env.step_unit(0.3, 0.1));
  }
}
BENCHMARK(BM_AgentEnvStep);
