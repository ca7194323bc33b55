#include <benchmark/benchmark.h>

#include "revar/bilevel.hpp"
#include "revar/mcvar.hpp"

namespace {

using namespace revar;

Batch random_batch(std::size_t n, std::size_t d, Rng& rng) {
  Batch b;
  b.x = Matrix(n, d);
  for (auto& v : b.x.data) v = rng.normal();
  b.y_real.resize(n);
  for (auto& v : b.y_real) v = rng.normal();
  return b;
}

void BM_Forward(benchmark::State& state) {
  Rng rng(1);
  const std::size_t d = 72;
  NetParams net = NetParams::make_mlp(d, {32}, 1, OutputKind::linear, 0.2, rng);
  std::vector<double> x(d);
  for (auto& v : x) v = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(forward(net, x));
}
BENCHMARK(BM_Forward);

void BM_DropoutVariance(benchmark::State& state) {
  Rng rng(2);
  const std::size_t d = 72;
  NetParams net = NetParams::make_mlp(d, {32}, 1, OutputKind::linear, 0.2, rng);
  McConfig cfg;
  MaskSet masks = sample_masks(net, cfg, rng);
  std::vector<double> x(d);
  for (auto& v : x) v = rng.normal();
  for (auto _ : state)
    benchmark::DoNotOptimize(dropout_variance_with(net, x, masks));
}
BENCHMARK(BM_DropoutVariance);

void BM_DropoutVarianceGrad(benchmark::State& state) {
  Rng rng(3);
  const std::size_t d = 72;
  NetParams net = NetParams::make_mlp(d, {32}, 1, OutputKind::linear, 0.2, rng);
  McConfig cfg;
  MaskSet masks = sample_masks(net, cfg, rng);
  std::vector<double> x(d);
  for (auto& v : x) v = rng.normal();
  for (auto _ : state)
    benchmark::DoNotOptimize(dropout_variance_grad(net, x, masks));
}
BENCHMARK(BM_DropoutVarianceGrad);

void BM_MetaGradient(benchmark::State& state) {
  Rng rng(4);
  const std::size_t d = 72;
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  NetParams net = NetParams::make_mlp(d, {32}, 1, OutputKind::linear, 0.2, rng);
  MetaNet meta = MetaNet::make(d, {32, 32}, MetaConditioning::instance, rng);
  Batch tr = random_batch(n, d, rng);
  Batch va = random_batch(n, d, rng);
  McConfig cfg;
  MaskSet masks = sample_masks(net, cfg, rng);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        meta_gradient(net, tr, va, meta, 0.05, cfg.reg_weight, masks));
}
BENCHMARK(BM_MetaGradient)->Arg(32)->Arg(128);

void BM_InnerStep(benchmark::State& state) {
  Rng rng(5);
  const std::size_t d = 72;
  NetParams net = NetParams::make_mlp(d, {32}, 1, OutputKind::linear, 0.2, rng);
  MetaNet meta = MetaNet::make(d, {32, 32}, MetaConditioning::instance, rng);
  Batch tr = random_batch(128, d, rng);
  for (auto _ : state)
    benchmark::DoNotOptimize(inner_step(net, tr, meta, 0.05));
}
BENCHMARK(BM_InnerStep);

}  // namespace
