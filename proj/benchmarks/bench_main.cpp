#include <benchmark/benchmark.h>

#include <random>

#include "mer/enhance.hpp"
#include "mer/flawfind.hpp"
#include "mer/inpaint.hpp"
#include "mer/maskgen.hpp"
#include "mer/metrics.hpp"
#include "mer/trainer.hpp"

using namespace mer;

namespace {

Tensor<float> random_tensor(const Shape& s, std::uint64_t seed) {
  Tensor<float> t(s);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1, 1);
  for (float& v : t.values()) v = d(rng);
  return t;
}

void BM_Conv3x3Forward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1));
  const Tensor<float> x = random_tensor({1, c, n, n}, 1), w = random_tensor({c, c, 3, 3}, 2), b = random_tensor({c}, 3);
  for (auto _ : state) {
    Graph<float> g;
    benchmark::DoNotOptimize(g.value(conv2d(g, g.constant(x), g.constant(w), g.constant(b), 1, 1)).data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(n) * n * c * c * 9);
}
BENCHMARK(BM_Conv3x3Forward)->Args({16, 256})->Args({64, 64})->Args({128, 32})->Unit(benchmark::kMillisecond);

void BM_Conv3x3Backward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1));
  const Tensor<float> x = random_tensor({1, c, n, n}, 1), w = random_tensor({c, c, 3, 3}, 2), b = random_tensor({c}, 3);
  for (auto _ : state) {
    Graph<float> g;
    Var xv = g.parameter(x), wv = g.parameter(w), bv = g.parameter(b);
    g.backward(sum(g, conv2d(g, xv, wv, bv, 1, 1)));
    benchmark::DoNotOptimize(g.grad(wv).data());
  }
}
BENCHMARK(BM_Conv3x3Backward)->Args({16, 256})->Args({64, 64})->Unit(benchmark::kMillisecond);

void BM_EnhanceTile(benchmark::State& state) {
  Params p;
  EnhanceHyper h;
  h.channels = static_cast<int>(state.range(0));
  init_enhance(p, h, 1);
  const Image y = scale_brightness(synthetic_mural(256, 2), 0.12);
  for (auto _ : state) benchmark::DoNotOptimize(enhance_image(y, p, h).samples().data());
}
BENCHMARK(BM_EnhanceTile)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_InpaintStages(benchmark::State& state) {
  InpaintConfig cfg;
  cfg.width = static_cast<int>(state.range(0));
  cfg.netl_scale = 1;
  Params p;
  init_inpaint(p, cfg, 1);
  const Image in = synthetic_mural(256, 3);
  const Mask m = generate_mask({MaskFamily::Dusk, 0.2, 256, 4});
  for (auto _ : state) benchmark::DoNotOptimize(inpaint_stages(p, in, m).global.samples().data());
}
BENCHMARK(BM_InpaintStages)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_GenerateMask(benchmark::State& state) {
  const auto family = static_cast<MaskFamily>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_mask({family, 0.35, 256, seed++}).bits().data());
  state.SetLabel(family_name(family));
}
BENCHMARK(BM_GenerateMask)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);

void BM_DetectFlaws(benchmark::State& state) {
  const Image img = synthetic_mural(256, 5);
  for (auto _ : state) benchmark::DoNotOptimize(detect_flaws(img).bits().data());
}
BENCHMARK(BM_DetectFlaws)->Unit(benchmark::kMillisecond);

void BM_PsnrSsim(benchmark::State& state) {
  const Image a = synthetic_mural(256, 6), b = synthetic_mural(256, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(psnr(a, b));
    benchmark::DoNotOptimize(ssim(a, b));
  }
}
BENCHMARK(BM_PsnrSsim)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
