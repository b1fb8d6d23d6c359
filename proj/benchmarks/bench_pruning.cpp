#include <benchmark/benchmark.h>

#include "thinner/thinner.hpp"

using namespace thinner;

namespace {

// VGG-16 sized score table: 13 conv layers plus fc1.
ScoreTable vgg_table(Widths& widths) {
  const std::vector<std::size_t> w{64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512};
  Rng rng(11);
  std::vector<LayerRawScores> raw;
  for (std::size_t l = 0; l < w.size(); ++l) {
    widths[l] = w[l];
    LayerRawScores layer{l, "L" + std::to_string(l), {}};
    for (std::size_t i = 0; i < w[l]; ++i) layer.raw.push_back(rng.uniform(0.0, 1.0));
    raw.push_back(std::move(layer));
  }
  return normalize_per_layer(Metric::kAaws, std::move(raw));
}

}  // namespace

static void BM_SelectGlobal(benchmark::State& state) {
  Widths widths;
  const ScoreTable table = vgg_table(widths);
  const auto k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(select_global(table, k, widths, 1));
}
BENCHMARK(BM_SelectGlobal)->Arg(236)->Arg(2000);

static void BM_ScoreAaws(benchmark::State& state) {
  LayerSpec conv{LayerKind::kConv2D, 64, 3, 1, 1, 2, ""};
  LayerSpec relu{LayerKind::kReLU};
  LayerSpec flat{LayerKind::kFlatten};
  LayerSpec fc{LayerKind::kDense, 256, 0, 1, 0, 2, ""};
  LayerSpec out{LayerKind::kDense, 10, 0, 1, 0, 2, ""};
  LayerSpec sm{LayerKind::kSoftmaxCrossEntropy};
  const Model model = init_model({3, 8, 8}, {conv, relu, conv, relu, flat, fc, relu, out, sm}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(score_aaws(model));
}
BENCHMARK(BM_ScoreAaws);

static void BM_GlobalSchedule(benchmark::State& state) {
  Widths widths;
  vgg_table(widths);
  for (auto _ : state) benchmark::DoNotOptimize(global_schedule(widths, 0.05, 7, 1));
}
BENCHMARK(BM_GlobalSchedule);
