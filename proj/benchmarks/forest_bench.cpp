#include <benchmark/benchmark.h>

#include "hingeforest/hinge_forest.hpp"
#include "hingeforest/layers.hpp"

namespace hf = hingeforest;

namespace {

constexpr std::size_t kBatch = 53;
constexpr std::size_t kFeatures = 100;
constexpr std::size_t kTrees = 100;

hf::ForestShape shape(hf::ForestKind kind, std::size_t depth) {
  return {kind, kTrees, depth, kFeatures, 10};
}

hf::Tensor<float> inputs(std::size_t rows, std::size_t cols) {
  hf::Tensor<float> x({rows, cols});
  hf::Rng rng = hf::make_rng(3);
  hf::fill_normal(x, rng, 0.0, 1.0);
  return x;
}

void BM_ForestForward(benchmark::State& state) {
  const auto kind = state.range(1) == 0 ? hf::ForestKind::kTree : hf::ForestKind::kFern;
  const auto params = hf::initialize_forest<float>(shape(kind, static_cast<std::size_t>(state.range(0))), 1);
  const auto x = inputs(kBatch, kFeatures);
  hf::Tensor<float> y;
  std::vector<hf::TraversalResult<float>> routes;
  for (auto _ : state) {
    hf::forest_forward(x, params.ref(), y, routes);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kBatch * kTrees));
}
BENCHMARK(BM_ForestForward)->ArgsProduct({{1, 5, 10, 16}, {0, 1}});

void BM_ForestBackward(benchmark::State& state) {
  const auto params = hf::initialize_forest<float>(shape(hf::ForestKind::kTree, static_cast<std::size_t>(state.range(0))), 1);
  const auto x = inputs(kBatch, kFeatures);
  hf::Tensor<float> y;
  std::vector<hf::TraversalResult<float>> routes;
  hf::forest_forward(x, params.ref(), y, routes);
  hf::Tensor<float> og(y.shape(), 1.0f);
  std::vector<float> dx(x.size()), dt(params.thresholds.size()), dw(params.leaf_weights.size());
  for (auto _ : state) {
    hf::forest_backward<float>(og, routes, params.ref(), dx, dt, dw);
    benchmark::DoNotOptimize(dt.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kBatch * kTrees));
}
BENCHMARK(BM_ForestBackward)->Arg(1)->Arg(5)->Arg(10);

void BM_Conv2dForward(benchmark::State& state) {
  hf::Conv2d<float> conv(1, 80, 5, 3);
  hf::Rng rng = hf::make_rng(4);
  hf::fill_normal(conv.kernels(), rng, 0.0, 0.01);
  hf::Tensor<float> x({kBatch, 1, 28, 28});
  hf::fill_normal(x, rng, 0.0, 1.0);
  const std::vector<hf::Shape> shapes{x.shape()};
  hf::Tensor<float> y(conv.output_shape(shapes));
  const std::vector<const hf::Tensor<float>*> in{&x};
  for (auto _ : state) {
    conv.forward(in, y, hf::Mode::kTrain);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_Conv2dForward);

}  // namespace

BENCHMARK_MAIN();
