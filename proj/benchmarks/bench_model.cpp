#include <benchmark/benchmark.h>

#include "advdiff/difficulty_model.hpp"

using namespace advdiff;

namespace {

DifficultyModelConfig config_for(int scale) {
  DifficultyModelConfig c;
  if (scale == 0) {  // desk profile
    c.d_model = 32;
    c.mlp_ratio = 2;
    c.head_width = 128;
    c.head_layers = 4;
  }
  return c;
}

}  // namespace

static void BM_ModelPredict(benchmark::State& state) {
  DifficultyModel model(config_for(static_cast<int>(state.range(0))), 1);
  const ActionBounds bounds = ActionBounds::for_road(RoadModel{});
  const Observation obs{12.0, -1.5, 2.0, 11.0, 0.3};
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(0.6, obs, bounds));
}
BENCHMARK(BM_ModelPredict)->Arg(0)->Arg(1);

static void BM_ModelForwardBackward(benchmark::State& state) {
  DifficultyModel model(config_for(static_cast<int>(state.range(0))), 1);
  const nn::Matrix tokens = nn::Matrix::Random(state.range(1), kModelTokens);
  for (auto _ : state) {
    nn::Tape tape;
    const nn::Var loss = nn::mean(nn::square(model.forward(tape, tokens).unit_action));
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.scalar());
  }
}
BENCHMARK(BM_ModelForwardBackward)->Args({0, 256})->Args({1, 64})->Unit(benchmark::kMillisecond);
