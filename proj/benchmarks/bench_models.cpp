#include <benchmark/benchmark.h>

#include "latentvol/unet.hpp"
#include "latentvol/vqgan.hpp"

using namespace latentvol;

static void BM_UNetForward(benchmark::State& state) {
  torch::manual_seed(0);
  ddpm::UNetOptions o;
  o.in_channels = 8;
  o.base_channels = 16;
  o.channel_mult = {1, 2};
  ddpm::UNet3d net(o);
  net->eval();
  torch::NoGradGuard ng;
  const auto x = torch::randn({state.range(0), 8, 8, 8, 4});
  const auto t = torch::full({state.range(0)}, 100, torch::kInt64);
  for (auto _ : state) benchmark::DoNotOptimize(net->forward(x, t));
}
BENCHMARK(BM_UNetForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

static void BM_SpatialAttention(benchmark::State& state) {
  torch::manual_seed(0);
  ddpm::SpatialAttention sa(32, 4);
  torch::NoGradGuard ng;
  const auto x = torch::randn({2, 32, 16, 16, 8});
  for (auto _ : state) benchmark::DoNotOptimize(sa->forward(x));
}
BENCHMARK(BM_SpatialAttention)->Unit(benchmark::kMillisecond);
