#include <benchmark/benchmark.h>

#include "orchestra/clustering.hpp"
#include "orchestra/encoder.hpp"

using namespace orchestra;

namespace {

DenseMatrix unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  DenseMatrix m(n, d);
  for (double& x : m.data()) x = rng.normal();
  normalize_rows(m);
  return m;
}

void BM_SinkhornBalanced(benchmark::State& state) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto g = static_cast<std::size_t>(state.range(1));
  const DenseMatrix pts = unit_rows(n, 32, rng);
  SinkhornConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(sinkhorn_balanced(pts, g, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_SinkhornBalanced)->Args({64, 4})->Args({256, 16})->Args({1024, 16})->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  Rng rng(2);
  const EncoderShape shape{.input_dim = 64, .hidden = {128}, .rep_dim = 32};
  const EncoderParams params = init_encoder(shape, rng);
  const auto batch = static_cast<std::size_t>(state.range(0));
  DenseMatrix x(batch, shape.input_dim);
  for (double& v : x.data()) v = rng.normal();
  DenseMatrix d_reps(batch, shape.rep_dim);
  for (double& v : d_reps.data()) v = rng.normal();
  for (auto _ : state) {
    const ForwardCache cache = forward_cached(params, x);
    Gradients grads = Gradients::zeros_like(params);
    backward(params, cache, d_reps, grads);
    benchmark::DoNotOptimize(grads);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_ForwardBackward)->Arg(16)->Arg(64)->Arg(256);

}  // namespace
BENCHMARK_MAIN();
