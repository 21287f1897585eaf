#include <benchmark/benchmark.h>

#include "mmt/ops.hpp"
#include "mmt/rng.hpp"

namespace {

using mmt::RngStream;
using mmt::Tape;
using mmt::Tensor;

void BM_matmul_f32(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  RngStream rng(1);
  auto a = Tensor<float>::randn({n, n}, rng);
  auto b = Tensor<float>::randn({n, n}, rng);
  Tape<float> tp(false);
  for (auto _ : state) {
    auto c = mmt::matmul(tp, a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_matmul_f32)->Arg(64)->Arg(128)->Arg(256);

void BM_forward_backward_mlp(benchmark::State& state) {
  const std::int64_t d = state.range(0);
  RngStream rng(2);
  auto x = Tensor<float>::randn({64, d}, rng);
  auto w1 = Tensor<float>::randn({d, 4 * d}, rng, 0.02f);
  auto w2 = Tensor<float>::randn({4 * d, d}, rng, 0.02f);
  for (auto _ : state) {
    Tape<float> tp;
    auto w1t = tp.watch(w1);
    auto w2t = tp.watch(w2);
    auto h = mmt::gelu(tp, mmt::matmul(tp, x, w1t));
    auto y = mmt::matmul(tp, h, w2t);
    auto loss = mmt::mean_all(tp, mmt::mul(tp, y, y));
    tp.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_forward_backward_mlp)->Arg(64)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
