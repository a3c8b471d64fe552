#include <benchmark/benchmark.h>

#include "mvseg/blocks.hpp"
#include "mvseg/mv_unet.hpp"
#include "mvseg/shape_mae.hpp"

using namespace mvseg;
using nn::Tensor;

namespace {

Tensor<float> noise(const nn::Shape4& shape, std::uint64_t seed) {
  Tensor<float> t(shape);
  Rng rng(seed);
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform());
  return t;
}

// args: channels, spatial size
void BM_ConvForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), s = static_cast<int>(state.range(1));
  nn::Conv2d<float> conv(c, c, 3, 1, 1);
  Rng rng(1);
  conv.init(rng);
  const auto x = noise({4, c, s, s}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x));
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_ConvForward)->Args({16, 128})->Args({64, 32})->Args({256, 8})->Unit(benchmark::kMillisecond);

void BM_ConvBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), s = static_cast<int>(state.range(1));
  nn::Conv2d<float> conv(c, c, 3, 1, 1);
  Rng rng(1);
  conv.init(rng);
  const auto x = noise({4, c, s, s}, 2);
  const auto dy = noise({4, c, s, s}, 3);
  conv.forward(x);
  for (auto _ : state) benchmark::DoNotOptimize(conv.backward(dy));
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_ConvBackward)->Args({16, 128})->Args({64, 32})->Args({256, 8})->Unit(benchmark::kMillisecond);

void BM_UNetForward(benchmark::State& state) {
  UNetConfig cfg;
  cfg.fuse_enabled = state.range(0) != 0;
  UNet<float> model(cfg);
  model.init(0);
  const auto x = noise({1, 1, cfg.image_size, cfg.image_size}, 4);
  const auto p = noise({1, 32, 8, 8}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(cfg.fuse_enabled ? model.forward(x, p) : model.forward(x));
}
BENCHMARK(BM_UNetForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ShapeMaeEncode(benchmark::State& state) {
  ShapeMae<float> model;
  model.init(0);
  const auto x = noise({1, 1, 128, 128}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(model.encode(x, 0));
}
BENCHMARK(BM_ShapeMaeEncode)->Unit(benchmark::kMillisecond);

}  // namespace
