// Serial reference vs OpenMP kernels, plus the whole forward pass.
// Arg order: backend (0 serial, 1 parallel), then sizes.

#include <benchmark/benchmark.h>

#include <vector>

#include "medmamba/kernels.hpp"
#include "medmamba/model.hpp"
#include "medmamba/rng.hpp"

using namespace medmamba;
using kernels::Backend;

namespace {

Backend backend_of(const benchmark::State& state) { return state.range(0) ? Backend::parallel : Backend::serial; }

std::vector<double> noise(std::size_t n, double scale, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

void BM_ScanForward(benchmark::State& state) {
  const kernels::ScanDims dims{4, static_cast<std::size_t>(state.range(1)), 128, 16};
  const std::size_t bl = dims.batch * dims.length;
  const auto u = noise(bl * dims.channels, 1.0, 1);
  auto delta = noise(bl * dims.channels, 0.1, 2);
  for (double& d : delta) d = 0.05 + d * d;
  auto a = noise(dims.channels * dims.state, 1.0, 3);
  for (double& x : a) x = -1.0 - x * x;
  const auto b = noise(bl * dims.state, 1.0, 4), c = noise(bl * dims.state, 1.0, 5), d = noise(dims.channels, 1.0, 6);
  std::vector<double> y(bl * dims.channels);
  const kernels::ScanArgs args{u, delta, a, b, c, d};
  for (auto _ : state) {
    kernels::scan_forward(backend_of(state), dims, args, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * bl * dims.channels * dims.state));
}

void BM_ScanBackward(benchmark::State& state) {
  const kernels::ScanDims dims{4, static_cast<std::size_t>(state.range(1)), 128, 16};
  const std::size_t bl = dims.batch * dims.length;
  const auto u = noise(bl * dims.channels, 1.0, 1);
  auto delta = noise(bl * dims.channels, 0.1, 2);
  for (double& d : delta) d = 0.05 + d * d;
  auto a = noise(dims.channels * dims.state, 1.0, 3);
  for (double& x : a) x = -1.0 - x * x;
  const auto b = noise(bl * dims.state, 1.0, 4), c = noise(bl * dims.state, 1.0, 5), d = noise(dims.channels, 1.0, 6);
  const auto dy = noise(bl * dims.channels, 1.0, 7);
  std::vector<double> du(u.size()), dd(delta.size()), da(a.size()), db(b.size()), dc(c.size()), ddk(d.size());
  const kernels::ScanArgs args{u, delta, a, b, c, d};
  const kernels::ScanGrads grads{du, dd, da, db, dc, ddk};
  for (auto _ : state) {
    kernels::scan_backward(backend_of(state), dims, args, dy, grads);
    benchmark::DoNotOptimize(du.data());
  }
}

void BM_Linear(benchmark::State& state) {
  const kernels::LinearDims dims{static_cast<std::size_t>(state.range(1)), 64, 256};
  const auto x = noise(dims.rows * dims.in, 1.0, 1), w = noise(dims.out * dims.in, 0.1, 2), bias = noise(dims.out, 1.0, 3);
  std::vector<double> y(dims.rows * dims.out);
  for (auto _ : state) {
    kernels::linear_forward(backend_of(state), dims, x, w, bias, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * dims.rows * dims.in * dims.out));
}

void BM_ModelForward(benchmark::State& state) {
  kernels::set_default_backend(backend_of(state));
  ModelConfig c;
  c.d_model = 64;
  c.length = static_cast<std::size_t>(state.range(1));
  model::Model m(c, 41);
  Tensor x({1, c.length, c.channels}, noise(c.length * c.channels, 1.0, 9));
  for (auto _ : state) benchmark::DoNotOptimize(m.predict(x));
  state.SetComplexityN(state.range(1));
  kernels::set_default_backend(Backend::parallel);
}

}  // namespace

BENCHMARK(BM_ScanForward)->ArgsProduct({{0, 1}, {256, 1024, 4096}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScanBackward)->ArgsProduct({{0, 1}, {256, 1024}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Linear)->ArgsProduct({{0, 1}, {512, 4096}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ModelForward)->ArgsProduct({{0, 1}, {1024, 2048, 4096, 8192}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
