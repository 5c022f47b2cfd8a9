#pragma once

#include <cmath>
#include <cstddef>

#include "medmamba/kernels.hpp"

namespace medmamba::kernels::detail {

// Four-way unrolled dot product. Both backends call this so their results
// are bitwise identical.
inline double dot(const double* a, const double* b, std::size_t n) noexcept {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// ZOH gain reusing an already computed abar = exp(delta*a).
inline double gain_from_abar(double abar, double delta, double a) noexcept {
  const double x = delta * a;
  if (std::abs(x) < kZohSeriesThreshold) return delta * (1.0 + x * (0.5 + x * (1.0 / 6.0 + x / 24.0)));
  return (abar - 1.0) / a;
}

inline double gain_ddelta(double abar, double delta, double a) noexcept {
  const double x = delta * a;
  if (std::abs(x) < kZohSeriesThreshold) return 1.0 + x * (1.0 + x * (0.5 + x / 6.0));
  return abar;
}

inline double gain_da(double abar, double gain, double delta, double a) noexcept {
  const double x = delta * a;
  if (std::abs(x) < kZohSeriesThreshold) return delta * delta * (0.5 + x * (1.0 / 3.0 + x / 8.0));
  return (delta * abar - gain) / a;
}

// Forward recurrence for one (sample, channel) pair. Strides are in
// elements: u/delta step by `cs` per time step, b/c by `ns`.
// When `history` is non-null it receives per step [h | abar | gain] (3N).
inline void scan_channel(std::size_t length, std::size_t n_state, const double* u, const double* delta,
                         std::size_t cs, const double* a, const double* b, const double* c, std::size_t ns,
                         double d_skip, double* y, double* h, double* history) noexcept {
  for (std::size_t n = 0; n < n_state; ++n) h[n] = 0.0;
  for (std::size_t t = 0; t < length; ++t) {
    const double ut = u[t * cs];
    const double dt = delta[t * cs];
    const double* bt = b + t * ns;
    const double* ct = c + t * ns;
    double acc = 0.0;
    double* rec = history ? history + t * 3 * n_state : nullptr;
    for (std::size_t n = 0; n < n_state; ++n) {
      const double abar = std::exp(dt * a[n]);
      const double gain = gain_from_abar(abar, dt, a[n]);
      h[n] = abar * h[n] + gain * bt[n] * ut;
      acc += ct[n] * h[n];
      if (rec) {
        rec[n] = h[n];
        rec[n_state + n] = abar;
        rec[2 * n_state + n] = gain;
      }
    }
    y[t * cs] = acc + d_skip * ut;
  }
}

// Forward recurrence for channels [d0, d1) of one sample, walking time in the
// outer loop so every row of u/delta/b/c is read contiguously. `h` holds
// (d1 - d0) * N states. Per channel the arithmetic matches scan_channel.
inline void scan_rows(std::size_t length, std::size_t n_state, std::size_t channels, std::size_t d0,
                      std::size_t d1, const double* u, const double* delta, const double* a, const double* b,
                      const double* c, const double* d_skip, double* y, double* h) noexcept {
  for (std::size_t i = 0; i < (d1 - d0) * n_state; ++i) h[i] = 0.0;
  for (std::size_t t = 0; t < length; ++t) {
    const double* bt = b + t * n_state;
    const double* ct = c + t * n_state;
    for (std::size_t d = d0; d < d1; ++d) {
      const double ut = u[t * channels + d];
      const double dt = delta[t * channels + d];
      const double* ad = a + d * n_state;
      double* hd = h + (d - d0) * n_state;
      double acc = 0.0;
      for (std::size_t n = 0; n < n_state; ++n) {
        const double abar = std::exp(dt * ad[n]);
        const double gain = gain_from_abar(abar, dt, ad[n]);
        hd[n] = abar * hd[n] + gain * bt[n] * ut;
        acc += ct[n] * hd[n];
      }
      y[t * channels + d] = acc + d_skip[d] * ut;
    }
  }
}

// Reverse sweep for one (sample, channel) pair given the forward history.
// `gh` is scratch of size N. Channel-local outputs (du, ddelta) use stride
// `cs`; state-indexed outputs (db, dc) use `ns`; da is the channel's row.
inline void scan_channel_backward(std::size_t length, std::size_t n_state, const double* u, const double* delta,
                                  std::size_t cs, const double* a, const double* b, const double* c,
                                  std::size_t ns, double d_skip, const double* dy, const double* history,
                                  double* gh, double* du, double* ddelta, double* da, double* db, double* dc,
                                  double* dd) noexcept {
  for (std::size_t n = 0; n < n_state; ++n) gh[n] = 0.0;
  for (std::size_t t = length; t-- > 0;) {
    const double ut = u[t * cs];
    const double dt = delta[t * cs];
    const double g = dy[t * cs];
    const double* bt = b + t * ns;
    const double* ct = c + t * ns;
    const double* rec = history + t * 3 * n_state;
    const double* hprev = t > 0 ? history + (t - 1) * 3 * n_state : nullptr;
    double du_t = d_skip * g;
    double dd_t = 0.0;
    if (dd) *dd += ut * g;
    for (std::size_t n = 0; n < n_state; ++n) {
      const double h = rec[n];
      const double abar = rec[n_state + n];
      const double gain = rec[2 * n_state + n];
      gh[n] += ct[n] * g;
      if (dc) dc[t * ns + n] += h * g;
      const double gh_n = gh[n];
      // h_t = abar h_{t-1} + gain b u
      if (db) db[t * ns + n] += gh_n * gain * ut;
      du_t += gh_n * gain * bt[n];
      const double dgain = gh_n * bt[n] * ut;
      const double dabar = hprev ? gh_n * hprev[n] : 0.0;
      dd_t += dabar * a[n] * abar + dgain * gain_ddelta(abar, dt, a[n]);
      if (da) da[n] += dabar * dt * abar + dgain * gain_da(abar, gain, dt, a[n]);
      gh[n] = gh_n * abar;
    }
    if (du) du[t * cs] += du_t;
    if (ddelta) ddelta[t * cs] += dd_t;
  }
}

}  // namespace medmamba::kernels::detail
