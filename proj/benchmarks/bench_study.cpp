#include <benchmark/benchmark.h>

#include "latentvol/phantom.hpp"
#include "latentvol/study.hpp"

using namespace latentvol;

static void BM_SlicePng(benchmark::State& state) {
  PhantomSpec spec;
  spec.shape = {state.range(0), state.range(0), 4};
  const auto v = generate_phantom(spec).volume;
  for (auto _ : state) benchmark::DoNotOptimize(study::slice_png(v, 2));
}
BENCHMARK(BM_SlicePng)->Arg(64)->Arg(256);
