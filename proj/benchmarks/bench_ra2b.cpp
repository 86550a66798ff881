#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "tfda/evalkit.hpp"
#include "tfda/ra2b.hpp"

using namespace tfda;

namespace {

// state.range(0): spatial side, state.range(1): channels.
void BM_AttentionMap(benchmark::State& state) {
  torch::set_num_threads(1);
  torch::NoGradGuard no_grad;
  const int64_t n = state.range(0) * state.range(0);
  const auto c1 = torch::randn({4, n, state.range(1)});
  const auto c2 = torch::randn({4, n, state.range(1)});
  const auto c3 = torch::randn({4, n, state.range(1)});
  for (auto _ : state) {
    auto out = attention_apply(attention_map(c1, c2), c3);
    benchmark::DoNotOptimize(out.data_ptr());
  }
  state.SetItemsProcessed(state.iterations() * 4 * n);
}
BENCHMARK(BM_AttentionMap)->Args({8, 16})->Args({16, 16})->Args({32, 16});

void BM_Ra2bForward(benchmark::State& state) {
  torch::set_num_threads(1);
  torch::NoGradGuard no_grad;
  const int64_t side = state.range(0);
  Ra2bBlock block(state.range(1), side, side);
  block->delta().fill_(0.5);
  const auto x = torch::randn({4, state.range(1), side, side});
  for (auto _ : state) {
    auto out = block->forward(x);
    benchmark::DoNotOptimize(out.data_ptr());
  }
  state.SetItemsProcessed(state.iterations() * 4 * side * side);
}
BENCHMARK(BM_Ra2bForward)->Args({8, 16})->Args({16, 16})->Args({32, 16});

void BM_Ra2bBackward(benchmark::State& state) {
  torch::set_num_threads(1);
  const int64_t side = state.range(0);
  Ra2bBlock block(state.range(1), side, side);
  const auto x = torch::randn({4, state.range(1), side, side});
  for (auto _ : state) {
    block->zero_grad();
    block->forward(x).square().sum().backward();
  }
}
BENCHMARK(BM_Ra2bBackward)->Args({8, 16})->Args({16, 16});

void BM_DomainGap(benchmark::State& state) {
  torch::set_num_threads(1);
  const auto a = torch::randn({state.range(0), 32});
  const auto b = torch::randn({state.range(0), 32}) + 0.5;
  GapOptions opts;
  opts.seeds = 1;
  for (auto _ : state) benchmark::DoNotOptimize(domain_gap_estimate(a, b, opts).d_hat);
}
BENCHMARK(BM_DomainGap)->Arg(80)->Arg(320);

}  // namespace

BENCHMARK_MAIN();
