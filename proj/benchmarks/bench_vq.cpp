#include <benchmark/benchmark.h>

#include "latentvol/random.hpp"
#include "latentvol/vq.hpp"

using namespace latentvol;

static void BM_AssignCodes(benchmark::State& state) {
  auto gen = torch_generator(1);
  const vq::Codebook cb(torch::randn({state.range(0), 8}, gen), 0.99, 1e-5);
  const auto vecs = torch::randn({4096, 8}, gen);
  for (auto _ : state) benchmark::DoNotOptimize(vq::assign_codes(vecs, cb));
  state.SetItemsProcessed(state.iterations() * 4096);
}
BENCHMARK(BM_AssignCodes)->Arg(512)->Arg(16384);

static void BM_NearestCode(benchmark::State& state) {
  auto gen = torch_generator(2);
  const vq::Codebook cb(torch::randn({512, 8}, gen), 0.99, 1e-5);
  const auto v = torch::randn({8}, gen);
  for (auto _ : state) benchmark::DoNotOptimize(vq::nearest_code(v, cb));
}
BENCHMARK(BM_NearestCode);

static void BM_EmaUpdate(benchmark::State& state) {
  auto gen = torch_generator(3);
  vq::Codebook cb(torch::randn({512, 8}, gen), 0.99, 1e-5);
  const auto latents = torch::randn({2048, 8}, gen);
  const auto assign = vq::assign_codes(latents, cb);
  for (auto _ : state) cb.update_ema(latents, assign);
}
BENCHMARK(BM_EmaUpdate);
BENCHMARK_MAIN();
