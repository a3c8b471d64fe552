#include <benchmark/benchmark.h>

#include "mvseg/metrics.hpp"
#include "mvseg/phantom.hpp"

using namespace mvseg;

namespace {

Mask disc(int size, double cx, double cy, double r) {
  Mask m(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) m(y, x) = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
  }
  return m;
}

void BM_Hausdorff(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const Mask a = disc(size, size * 0.5, size * 0.5, size * 0.3);
  const Mask b = disc(size, size * 0.55, size * 0.45, size * 0.28);
  for (auto _ : state) benchmark::DoNotOptimize(hausdorff(a, b, {}));
}
BENCHMARK(BM_Hausdorff)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_Dice(benchmark::State& state) {
  const Mask a = disc(128, 64, 64, 40), b = disc(128, 70, 60, 38);
  for (auto _ : state) benchmark::DoNotOptimize(dice(a, b));
}
BENCHMARK(BM_Dice);

void BM_RasterizeView(benchmark::State& state) {
  const AnatomyParams anatomy = sample_anatomy(3, {});
  const Subject s = generate_subject(anatomy, {}, 3);
  const ViewPlane plane = s.target_plane(static_cast<int>(state.range(0)));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(rasterize_view(anatomy, plane, seed++));
}
BENCHMARK(BM_RasterizeView)->Arg(0)->Arg(4)->Unit(benchmark::kMicrosecond);

void BM_GenerateSubject(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_subject(sample_anatomy(seed, {}), {}, seed));
    ++seed;
  }
}
BENCHMARK(BM_GenerateSubject)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
