// Reference kernels: plain loops in a fixed order.

#include <algorithm>
#include <cmath>
#include <vector>

#include "detail.hpp"

namespace medmamba::kernels {

double zoh_gain(double delta, double a) noexcept {
  const double x = delta * a;
  if (std::abs(x) < kZohSeriesThreshold) return delta * (1.0 + x * (0.5 + x * (1.0 / 6.0 + x / 24.0)));
  return std::expm1(x) / a;
}

double zoh_gain_ddelta(double delta, double a) noexcept {
  const double x = delta * a;
  if (std::abs(x) < kZohSeriesThreshold) return 1.0 + x * (1.0 + x * (0.5 + x / 6.0));
  return std::exp(x);
}

double zoh_gain_da(double delta, double a) noexcept {
  const double x = delta * a;
  if (std::abs(x) < kZohSeriesThreshold) return delta * delta * (0.5 + x * (1.0 / 3.0 + x / 8.0));
  return (delta * std::exp(x) - std::expm1(x) / a) / a;
}

namespace serial {

void linear_forward(LinearDims dims, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  for (std::size_t r = 0; r < dims.rows; ++r) {
    const double* xr = x.data() + r * dims.in;
    double* yr = y.data() + r * dims.out;
    for (std::size_t o = 0; o < dims.out; ++o) {
      yr[o] = detail::dot(xr, w.data() + o * dims.in, dims.in) + (bias.empty() ? 0.0 : bias[o]);
    }
  }
}

void linear_backward_input(LinearDims dims, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx) {
  for (std::size_t r = 0; r < dims.rows; ++r) {
    const double* gr = dy.data() + r * dims.out;
    double* xr = dx.data() + r * dims.in;
    for (std::size_t o = 0; o < dims.out; ++o) detail::axpy(gr[o], w.data() + o * dims.in, xr, dims.in);
  }
}

void linear_backward_weight(LinearDims dims, std::span<const double> dy, std::span<const double> x,
                            std::span<double> dw, std::span<double> dbias) {
  for (std::size_t o = 0; o < dims.out; ++o) {
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
  std::vector<double> h(D * N);
  for (std::size_t b = 0; b < dims.batch; ++b) {
    const std::size_t xo = b * L * D, so = b * L * N;
    detail::scan_rows(L, N, D, 0, D, args.u.data() + xo, args.delta.data() + xo, args.a.data(),
                      args.b.data() + so, args.c.data() + so, args.d.data(), y.data() + xo, h.data());
  }
}

void scan_backward(ScanDims dims, const ScanArgs& args, std::span<const double> dy, const ScanGrads& grads) {
  const std::size_t L = dims.length, D = dims.channels, N = dims.state;
  std::vector<double> h(N), gh(N), history(3 * L * N), ybuf(L * D);
  // A and D are shared across the batch: accumulate one sample at a time.
  std::vector<double> part_a(grads.a.empty() ? 0 : D * N), part_d(grads.d.empty() ? 0 : D);
  for (std::size_t b = 0; b < dims.batch; ++b) {
    std::fill(part_a.begin(), part_a.end(), 0.0);
    std::fill(part_d.begin(), part_d.end(), 0.0);
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
          part_a.empty() ? nullptr : part_a.data() + d * N, grads.b.empty() ? nullptr : grads.b.data() + b * L * N,
          grads.c.empty() ? nullptr : grads.c.data() + b * L * N, part_d.empty() ? nullptr : part_d.data() + d);
    }
    for (std::size_t i = 0; i < part_a.size(); ++i) grads.a[i] += part_a[i];
    for (std::size_t i = 0; i < part_d.size(); ++i) grads.d[i] += part_d[i];
  }
}

}  // namespace serial
}  // namespace medmamba::kernels
