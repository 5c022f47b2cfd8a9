// OpenMP kernels. Every output element is produced by exactly one thread
// with the same operation order as the serial reference; reductions across
// samples go through per-sample partials summed in sample order.

#include <algorithm>
#include <vector>

#include "detail.hpp"

namespace medmamba::kernels::parallel {

namespace {
using Index = std::ptrdiff_t;
}

void linear_forward(LinearDims dims, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  const Index rows = static_cast<Index>(dims.rows);
#pragma omp parallel for schedule(static) if (dims.rows * dims.out * dims.in > 32768)
  for (Index r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * dims.in;
    double* yr = y.data() + r * dims.out;
    for (std::size_t o = 0; o < dims.out; ++o) {
      yr[o] = detail::dot(xr, w.data() + o * dims.in, dims.in) + (bias.empty() ? 0.0 : bias[o]);
    }
  }
}

void linear_backward_input(LinearDims dims, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx) {
  const Index rows = static_cast<Index>(dims.rows);
#pragma omp parallel for schedule(static) if (dims.rows * dims.out * dims.in > 32768)
  for (Index r = 0; r < rows; ++r) {
    const double* gr = dy.data() + r * dims.out;
    double* xr = dx.data() + r * dims.in;
    for (std::size_t o = 0; o < dims.out; ++o) detail::axpy(gr[o], w.data() + o * dims.in, xr, dims.in);
  }
}

void linear_backward_weight(LinearDims dims, std::span<const double> dy, std::span<const double> x,
                            std::span<double> dw, std::span<double> dbias) {
  const Index outs = static_cast<Index>(dims.out);
#pragma omp parallel for schedule(static) if (dims.rows * dims.out * dims.in > 32768)
  for (Index o = 0; o < outs; ++o) {
    double* wr = dw.data() + o * dims.in;
    double bacc = 0.0;
    for (std::size_t r = 0; r < dims.rows; ++r) {
      const double g = dy[r * dims.out + o];
      bacc += g;
      detail::axpy(g, x.data() + r * dims.in, wr, dims.in);
    }
    if (!dbias.empty()) dbias[o] += bacc;
  }
}

void scan_forward(ScanDims dims, const ScanArgs& args, std::span<double> y) {
  const std::size_t L = dims.length, D = dims.channels, N = dims.state;
  constexpr std::size_t kBlock = 16;
  const std::size_t blocks = (D + kBlock - 1) / kBlock;
  const Index tasks = static_cast<Index>(dims.batch * blocks);
#pragma omp parallel
  {
    std::vector<double> h(kBlock * N);
#pragma omp for schedule(static)
    for (Index task = 0; task < tasks; ++task) {
      const std::size_t b = static_cast<std::size_t>(task) / blocks;
      const std::size_t d0 = (static_cast<std::size_t>(task) % blocks) * kBlock;
      const std::size_t d1 = std::min(D, d0 + kBlock);
      const std::size_t xo = b * L * D, so = b * L * N;
      detail::scan_rows(L, N, D, d0, d1, args.u.data() + xo, args.delta.data() + xo, args.a.data(),
                        args.b.data() + so, args.c.data() + so, args.d.data(), y.data() + xo, h.data());
    }
  }
}

void scan_backward(ScanDims dims, const ScanArgs& args, std::span<const double> dy, const ScanGrads& grads) {
  const std::size_t L = dims.length, D = dims.channels, N = dims.state;
  const Index batch = static_cast<Index>(dims.batch);
  // Per-sample partials for the parameters shared across the batch.
  std::vector<double> part_a(grads.a.empty() ? 0 : dims.batch * D * N, 0.0);
  std::vector<double> part_d(grads.d.empty() ? 0 : dims.batch * D, 0.0);
#pragma omp parallel
  {
    std::vector<double> h(N), gh(N), history(3 * L * N), ybuf(L * D);
#pragma omp for schedule(static)
    for (Index bi = 0; bi < batch; ++bi) {
      const auto b = static_cast<std::size_t>(bi);
      for (std::size_t d = 0; d < D; ++d) {
        const std::size_t base = b * L * D + d;
        const double* u = args.u.data() + base;
        const double* dl = args.delta.data() + base;
        const double* a = args.a.data() + d * N;
        const double* bb = args.b.data() + b * L * N;
        const double* cc = args.c.data() + b * L * N;
        detail::scan_channel(L, N, u, dl, D, a, bb, cc, N, args.d[d], ybuf.data() + d, h.data(), history.data());
        detail::scan_channel_backward(
            L, N, u, dl, D, a, bb, cc, N, args.d[d], dy.data() + base, history.data(), gh.data(),
            grads.u.empty() ? nullptr : grads.u.data() + base,
            grads.delta.empty() ? nullptr : grads.delta.data() + base,
            part_a.empty() ? nullptr : part_a.data() + (b * D + d) * N,
            grads.b.empty() ? nullptr : grads.b.data() + b * L * N,
            grads.c.empty() ? nullptr : grads.c.data() + b * L * N,
            part_d.empty() ? nullptr : part_d.data() + b * D + d);
      }
    }
  }
  for (std::size_t b = 0; b < dims.batch; ++b) {
    if (!part_a.empty())
      for (std::size_t i = 0; i < D * N; ++i) grads.a[i] += part_a[b * D * N + i];
    if (!part_d.empty())
      for (std::size_t i = 0; i < D; ++i) grads.d[i] += part_d[b * D + i];
  }
}

}  // namespace medmamba::kernels::parallel
