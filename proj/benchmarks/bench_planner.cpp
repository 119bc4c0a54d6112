#include <benchmark/benchmark.h>

#include "advdiff/trajectory.hpp"

using namespace advdiff;

static void BM_SolveLateral(benchmark::State& state) {
  LateralBoundary b{0.2, 0.1, 0.0, 3.5, 0.0, 0.0, 3.0};
  for (auto _ : state) {
    b.d0 += 1e-9;
    benchmark::DoNotOptimize(solve_lateral(b));
  }
}
BENCHMARK(BM_SolveLateral);

static void BM_SolveLongitudinal(benchmark::State& state) {
  LongitudinalBoundary b{10.0, 8.0, 0.5, 12.0, 0.0, 3.0};
  for (auto _ : state) {
    b.s0_dot += 1e-9;
    benchmark::DoNotOptimize(solve_longitudinal(b));
  }
}
BENCHMARK(BM_SolveLongitudinal);

static void BM_EvalPoly(benchmark::State& state) {
  const QuinticCoeffs c{0, 0, 0, 35, -52.5, 21};
  double t = 0.0;
  for (auto _ : state) {
    t = t < 1.0 ? t + 1e-3 : 0.0;
    benchmark::DoNotOptimize(eval_poly(c, t));
  }
}
BENCHMARK(BM_EvalPoly);
