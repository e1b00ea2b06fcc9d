#include <benchmark/benchmark.h>

#include "tfm/elasticity.hpp"
#include "tfm/layers.hpp"
#include "tfm/models.hpp"
#include "tfm/ops.hpp"
#include "tfm/rng.hpp"

using namespace tfm;

namespace {

Tensor<float> noise(Shape shape, std::uint64_t seed) {
  RngStream rng(seed, "bench");
  return Tensor<float>::normal(std::move(shape), rng);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = noise({n, n}, 1);
  auto b = noise({n, n}, 2);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(128)->Arg(256)->Arg(512);

// 3x3 same convolution at the first U-Net level.
void BM_Conv3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const ConvSpec spec = ConvSpec::same3x3(c, c);
  auto x = noise({c, 104, 104}, 3);
  auto w = noise(spec.weight_shape(), 4);
  auto b = noise({c}, 5);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, spec));
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(64);

void BM_ConvBackward(benchmark::State& state) {
  const ConvSpec spec = ConvSpec::same3x3(16, 16);
  auto x = noise({16, 104, 104}, 6).set_requires_grad();
  auto w = noise(spec.weight_shape(), 7).set_requires_grad();
  auto b = noise({16}, 8).set_requires_grad();
  for (auto _ : state) {
    backward(sum(conv2d(x, w, b, spec)));
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_ConvBackward);

void BM_ModelForward(benchmark::State& state) {
  const auto kind = static_cast<ModelKind>(state.range(0));
  ModelConfig cfg = ModelConfig::defaults(kind, 104);
  cfg.unet.widths = {16, 32, 64, 128};
  cfg.vit.dim = 128;
  cfg.vit.layers = 2;
  cfg.vit.heads = 4;
  cfg.vit.mlp_hidden = 256;
  if (kind == ModelKind::hybrid) cfg.sync_hybrid_geometry();
  auto model = make_model<float>(cfg, 1);
  auto u = noise({2, 104, 104}, 9);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(model->forward(u));
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_ModelForward)
    ->Arg(static_cast<int>(ModelKind::unet))
    ->Arg(static_cast<int>(ModelKind::vit))
    ->Arg(static_cast<int>(ModelKind::hybrid))
    ->Unit(benchmark::kMillisecond);

void BM_ForwardDisplacement(benchmark::State& state) {
  ElasticSubstrate s;
  s.n = static_cast<std::size_t>(state.range(0));
  RngStream rng(10, "bench");
  auto f = Tensor<double>::normal({2, s.n, s.n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(forward_displacement(f, s));
}
BENCHMARK(BM_ForwardDisplacement)->Arg(104)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
