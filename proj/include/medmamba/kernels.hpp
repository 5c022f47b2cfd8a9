#pragma once

// Hot loops of the model. Each kernel has a serial reference and an OpenMP
// variant; both produce results independent of thread scheduling.

#include <cstddef>
#include <span>

namespace medmamba::kernels {

enum class Backend { serial, parallel };

Backend default_backend() noexcept;
void set_default_backend(Backend backend) noexcept;
const char* backend_name(Backend backend) noexcept;
int max_threads() noexcept;

struct LinearDims {
  std::size_t rows;
  std::size_t in;
  std::size_t out;
};

// y[r, o] = sum_i x[r, i] w[o, i] + bias[o]; bias may be empty.
void linear_forward(Backend backend, LinearDims dims, std::span<const double> x,
                    std::span<const double> w, std::span<const double> bias, std::span<double> y);
// dx += dy w
void linear_backward_input(Backend backend, LinearDims dims, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx);
// dw += dy^T x ; dbias += colsum(dy) (dbias may be empty)
void linear_backward_weight(Backend backend, LinearDims dims, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw,
                            std::span<double> dbias);

struct ScanDims {
  std::size_t batch;
  std::size_t length;
  std::size_t channels;  // D_inner
  std::size_t state;     // N
};

// Row-major views: u, delta [batch, length, channels]; a [channels, state];
// b, c [batch, length, state]; d [channels].
struct ScanArgs {
  std::span<const double> u;
  std::span<const double> delta;
  std::span<const double> a;
  std::span<const double> b;
  std::span<const double> c;
  std::span<const double> d;
};

// Gradient accumulators, same layouts as ScanArgs. Empty spans are skipped.
struct ScanGrads {
  std::span<double> u;
  std::span<double> delta;
  std::span<double> a;
  std::span<double> b;
  std::span<double> c;
  std::span<double> d;
};

// Selective scan with zero-order-hold discretization fused in:
//   h_t = exp(delta*a) h_{t-1} + zoh_gain(delta, a) b_t u_t,  h_0 = 0
//   y_t = <c_t, h_t> + d u_t
void scan_forward(Backend backend, ScanDims dims, const ScanArgs& args, std::span<double> y);
void scan_backward(Backend backend, ScanDims dims, const ScanArgs& args,
                   std::span<const double> dy, const ScanGrads& grads);

/// (exp(delta*a) - 1)/a, the exact ZOH input gain for a diagonal state
/// matrix, switching to its Taylor series (through x^3/24, x = delta*a)
/// when |x| < 1e-4.
double zoh_gain(double delta, double a) noexcept;
// Partial derivatives of zoh_gain on the branch it evaluates.
double zoh_gain_ddelta(double delta, double a) noexcept;
double zoh_gain_da(double delta, double a) noexcept;

constexpr double kZohSeriesThreshold = 1e-4;

}  // namespace medmamba::kernels
