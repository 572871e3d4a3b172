#include <benchmark/benchmark.h>

#include "latentvol/metrics.hpp"
#include "latentvol/phantom.hpp"

using namespace latentvol;

namespace {

Volume bench_phantom(std::uint64_t seed, std::int64_t side) {
  PhantomSpec spec;
  spec.seed = seed;
  spec.shape = {side, side, 16};
  return generate_phantom(spec).volume;
}

}  // namespace

static void BM_Ssim(benchmark::State& state) {
  const auto a = bench_phantom(1, state.range(0));
  const auto b = bench_phantom(2, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(128);

static void BM_MsSsim(benchmark::State& state) {
  const auto a = bench_phantom(1, state.range(0));
  const auto b = bench_phantom(2, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::ms_ssim(a, b));
}
BENCHMARK(BM_MsSsim)->Arg(64)->Arg(192);

static void BM_Diversity(benchmark::State& state) {
  std::vector<Volume> set;
  for (std::uint64_t i = 0; i < 8; ++i) set.push_back(bench_phantom(i, 64));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::diversity_score(set, 28, 0).mean);
}
BENCHMARK(BM_Diversity)->Unit(benchmark::kMillisecond);
