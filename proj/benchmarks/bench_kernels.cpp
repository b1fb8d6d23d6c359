#include <benchmark/benchmark.h>

#include "thinner/thinner.hpp"

using namespace thinner;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

LayerSpec layer(LayerKind kind, std::size_t units = 0, std::size_t padding = 0) {
  LayerSpec s;
  s.kind = kind;
  s.units = units;
  s.padding = padding;
  return s;
}

Model desk_model(std::size_t hw) {
  return init_model({1, hw, hw},
                    {layer(LayerKind::kConv2D, 16, 1), layer(LayerKind::kReLU), layer(LayerKind::kMaxPool2D),
                     layer(LayerKind::kConv2D, 32, 1), layer(LayerKind::kReLU), layer(LayerKind::kMaxPool2D),
                     layer(LayerKind::kFlatten), layer(LayerKind::kDense, 128), layer(LayerKind::kReLU),
                     layer(LayerKind::kDense, 64), layer(LayerKind::kReLU), layer(LayerKind::kDense, 2),
                     layer(LayerKind::kSoftmaxCrossEntropy)},
                    1);
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1);
  const Tensor b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(256);

static void BM_Conv2dForward(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({channels, 12, 12}, 3);
  const Tensor f = random_tensor({channels * 2, channels, 3, 3}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(x, f, 1, 1));
}
BENCHMARK(BM_Conv2dForward)->Arg(1)->Arg(16);

static void BM_Forward(benchmark::State& state) {
  const Model model = desk_model(12);
  const Tensor batch = random_tensor({32, 1, 12, 12}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(forward(model, batch));
}
BENCHMARK(BM_Forward);

static void BM_Backward(benchmark::State& state) {
  const Model model = desk_model(12);
  const Tensor batch = random_tensor({32, 1, 12, 12}, 7);
  std::vector<int> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
  for (auto _ : state) benchmark::DoNotOptimize(backward(model, batch, labels));
}
BENCHMARK(BM_Backward);
