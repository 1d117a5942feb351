#include <benchmark/benchmark.h>

#include <vector>

#include "condgan/kernels.hpp"
#include "condgan/random.hpp"
#include "condgan/reference.hpp"

using namespace condgan;

namespace {

std::vector<float> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& e : v) e = static_cast<float>(rng.normal());
  return v;
}

// Layer shapes of the default discriminator on a batch of 48 (three stacked
// batches of 16) and of the generator's last deconvolution.
ConvGeometry geometry(int which) {
  switch (which) {
    case 0: return {48, 4, 16, 32, 32, 4, 2, 1};
    case 1: return {48, 16, 32, 16, 16, 4, 2, 1};
    case 2: return {48, 32, 64, 8, 8, 4, 2, 1};
    default: return {16, 3, 16, 32, 32, 4, 2, 1};
  }
}

void label(benchmark::State& state, const ConvGeometry& g) {
  state.SetLabel(std::to_string(g.batch) + "x" + std::to_string(g.in_channels) + "x" + std::to_string(g.in_h) +
                 " -> " + std::to_string(g.out_channels) + "x" + std::to_string(g.out_h()));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(g.batch));
}

void BM_matmul_parallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    kernels::matmul<float>(a, b, c, n, n, n, false);
    benchmark::DoNotOptimize(c.data());
  }
}

void BM_matmul_reference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    reference::matmul<float>(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
}

void BM_conv_forward_parallel(benchmark::State& state) {
  const auto g = geometry(static_cast<int>(state.range(0)));
  const auto x = random_vector(g.input_size(), 1), w = random_vector(g.weight_size(), 2);
  std::vector<float> y(g.output_size());
  for (auto _ : state) {
    kernels::conv2d_forward<float>(g, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
  label(state, g);
}

void BM_conv_forward_reference(benchmark::State& state) {
  const auto g = geometry(static_cast<int>(state.range(0)));
  const auto x = random_vector(g.input_size(), 1), w = random_vector(g.weight_size(), 2);
  std::vector<float> y(g.output_size());
  for (auto _ : state) {
    reference::conv2d_forward<float>(g, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
  label(state, g);
}

void BM_conv_backward_input_parallel(benchmark::State& state) {
  const auto g = geometry(static_cast<int>(state.range(0)));
  const auto dy = random_vector(g.output_size(), 1), w = random_vector(g.weight_size(), 2);
  std::vector<float> dx(g.input_size());
  for (auto _ : state) {
    kernels::conv2d_backward_input<float>(g, dy, w, dx, false);
    benchmark::DoNotOptimize(dx.data());
  }
  label(state, g);
}

void BM_conv_backward_input_reference(benchmark::State& state) {
  const auto g = geometry(static_cast<int>(state.range(0)));
  const auto dy = random_vector(g.output_size(), 1), w = random_vector(g.weight_size(), 2);
  std::vector<float> dx(g.input_size());
  for (auto _ : state) {
    reference::conv2d_backward_input<float>(g, dy, w, dx);
    benchmark::DoNotOptimize(dx.data());
  }
  label(state, g);
}

void BM_conv_backward_weight_parallel(benchmark::State& state) {
  const auto g = geometry(static_cast<int>(state.range(0)));
  const auto x = random_vector(g.input_size(), 1), dy = random_vector(g.output_size(), 2);
  std::vector<float> dw(g.weight_size());
  for (auto _ : state) {
    kernels::conv2d_backward_weight<float>(g, x, dy, dw, false);
    benchmark::DoNotOptimize(dw.data());
  }
  label(state, g);
}

void BM_conv_backward_weight_reference(benchmark::State& state) {
  const auto g = geometry(static_cast<int>(state.range(0)));
  const auto x = random_vector(g.input_size(), 1), dy = random_vector(g.output_size(), 2);
  std::vector<float> dw(g.weight_size());
  for (auto _ : state) {
    reference::conv2d_backward_weight<float>(g, x, dy, dw);
    benchmark::DoNotOptimize(dw.data());
  }
  label(state, g);
}

}  // namespace

BENCHMARK(BM_matmul_parallel)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_matmul_reference)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_conv_forward_parallel)->DenseRange(0, 3)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_conv_forward_reference)->DenseRange(0, 3)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_conv_backward_input_parallel)->DenseRange(0, 3)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_conv_backward_input_reference)->DenseRange(0, 3)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_conv_backward_weight_parallel)->DenseRange(0, 3)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_conv_backward_weight_reference)->DenseRange(0, 3)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
