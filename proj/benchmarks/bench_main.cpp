#include <benchmark/benchmark.h>

#include "deepsim/models.hpp"
#include "deepsim/nn.hpp"
#include "deepsim/registration.hpp"
#include "deepsim/similarity.hpp"
#include "deepsim/synth.hpp"
#include "deepsim/warp.hpp"

namespace {

using namespace deepsim;

SynthPair bench_pair(int size) {
  SceneSpec scene;
  scene.height = scene.width = size;
  return make_pair(scene, WarpSpec{}, 0);
}

void BM_Conv2d(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  const int size = static_cast<int>(state.range(1));
  const Rng rng(1);
  nn::Tensor input(channels, size, size);
  for (std::size_t i = 0; i < input.data.size(); ++i) input.data[i] = rng.uniform(i, -1.0, 1.0);
  nn::ConvLayer layer(channels, channels, 3);
  for (std::size_t i = 0; i < layer.kernel.size(); ++i) layer.kernel[i] = rng.uniform(1000000 + i, -0.1, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(input, layer));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(size) * size);
}
BENCHMARK(BM_Conv2d)->Args({16, 64})->Args({32, 32})->Args({64, 16});

void BM_WarpImage(benchmark::State& state) {
  const auto pair = bench_pair(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(warp_image(pair.moving.image, pair.truth));
}
BENCHMARK(BM_WarpImage)->Arg(64)->Arg(128);

void BM_LossAndGradient(benchmark::State& state, const char* spec) {
  const auto pair = bench_pair(64);
  MetricKind metric = std::string_view(spec) == "deepsim" ? MetricKind{DeepSimMetric{random_extractor(7), "bench"}}
                                                          : parse_metric(spec);
  std::optional<LabelPair> labels;
  if (needs_labels(metric)) labels = LabelPair{pair.moving.labels, pair.fixed.labels};
  const RegistrationObjective objective(metric, pair.moving.image, pair.fixed.image, 0.1, labels);
  for (auto _ : state) benchmark::DoNotOptimize(objective.evaluate(pair.truth, true));
}
BENCHMARK_CAPTURE(BM_LossAndGradient, mse, "mse");
BENCHMARK_CAPTURE(BM_LossAndGradient, ncc, "ncc:9");
BENCHMARK_CAPTURE(BM_LossAndGradient, nccsup, "nccsup:9:1");
BENCHMARK_CAPTURE(BM_LossAndGradient, deepsim, "deepsim");

void BM_RegisterIterative(benchmark::State& state) {
  const auto pair = bench_pair(64);
  IterConfig cfg;
  cfg.steps = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(register_iterative(pair.moving.image, pair.fixed.image, cfg));
}
BENCHMARK(BM_RegisterIterative)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
