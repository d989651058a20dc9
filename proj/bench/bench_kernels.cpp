// OpenMP kernels against the serial reference implementations.

#include <benchmark/benchmark.h>

#include <vector>

#include "xmodal/kernels.hpp"

namespace {

using namespace xmodal;

std::vector<double> random_values(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform(rng, -1.0, 1.0);
  return v;
}

Tensor random_tensor(int c, int h, int w, Rng& rng) {
  Tensor t(c, h, w);
  auto v = random_values(t.values().size(), rng);
  std::copy(v.begin(), v.end(), t.values().begin());
  return t;
}

struct ConvCase {
  Tensor input;
  std::vector<double> weights;
  std::vector<double> bias;
  int out_channels;

  explicit ConvCase(int size) : out_channels(16) {
    Rng rng(7);
    input = random_tensor(16, size, size, rng);
    weights = random_values(static_cast<std::size_t>(out_channels) * 16 * 9, rng);
    bias = random_values(out_channels, rng);
  }
};

template <auto Forward>
void BM_ConvForward(benchmark::State& state) {
  ConvCase c(static_cast<int>(state.range(0)));
  Tensor out;
  for (auto _ : state) {
    Forward(c.input, c.weights, c.bias, c.out_channels, 1, out);
    benchmark::DoNotOptimize(out.values().data());
  }
}

template <auto Backward>
void BM_ConvBackward(benchmark::State& state) {
  ConvCase c(static_cast<int>(state.range(0)));
  Tensor grad_out(c.out_channels, c.input.height(), c.input.width(), 1.0);
  Tensor grad_in;
  std::vector<double> gw(c.weights.size()), gb(c.bias.size());
  for (auto _ : state) {
    Backward(c.input, c.weights, 1, grad_out, &grad_in, gw, gb);
    benchmark::DoNotOptimize(gw.data());
  }
}

template <auto Nearest>
void BM_NearestNeighbors(benchmark::State& state) {
  Rng rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * 64, rng);
  const auto b = random_values(n * 64, rng);
  std::vector<int> index;
  std::vector<double> dist;
  for (auto _ : state) {
    Nearest(DescriptorRows{a, 64}, DescriptorRows{b, 64}, index, dist);
    benchmark::DoNotOptimize(index.data());
  }
}

template <auto AnyWithin>
void BM_AnyWithin(benchmark::State& state) {
  Rng rng(5);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<Point2> q(n), t(n);
  for (auto& p : q) p = {uniform(rng, 0, 512), uniform(rng, 0, 512)};
  for (auto& p : t) p = {uniform(rng, 0, 512), uniform(rng, 0, 512)};
  std::vector<char> flags;
  for (auto _ : state) {
    AnyWithin(q, t, 3.0, flags);
    benchmark::DoNotOptimize(flags.data());
  }
}

BENCHMARK(BM_ConvForward<kernels::conv3x3_forward>)->Arg(64)->Arg(128);
BENCHMARK(BM_ConvForward<reference::conv3x3_forward>)->Arg(64)->Arg(128);
BENCHMARK(BM_ConvBackward<kernels::conv3x3_backward>)->Arg(64)->Arg(128);
BENCHMARK(BM_ConvBackward<reference::conv3x3_backward>)->Arg(64)->Arg(128);
BENCHMARK(BM_NearestNeighbors<kernels::nearest_neighbors>)->Arg(1024)->Arg(4096);
BENCHMARK(BM_NearestNeighbors<reference::nearest_neighbors>)->Arg(1024)->Arg(4096);
BENCHMARK(BM_AnyWithin<kernels::any_within>)->Arg(1024)->Arg(4096);
BENCHMARK(BM_AnyWithin<reference::any_within>)->Arg(1024)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
