#include "medmamba/ssm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "medmamba/errors.hpp"

namespace medmamba::ssm {

Tensor SsmParams::transition() const {
  Tensor a(a_log.shape());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(a_log[i]);
  return a;
}

double inverse_softplus(double y) {
  if (y <= 0.0) throw DomainError("inverse_softplus: argument must be positive");
  return y + std::log(-std::expm1(-y));
}

SsmParams s4d_init(std::size_t d_inner, std::size_t n_state, Rng& rng) {
  if (d_inner == 0 || n_state == 0) throw ConfigError("s4d_init: D_inner and N must be >= 1");
  SsmParams p;
  p.a_log = Tensor({d_inner, n_state});
  for (std::size_t d = 0; d < d_inner; ++d)
    for (std::size_t n = 0; n < n_state; ++n) p.a_log[d * n_state + n] = std::log(static_cast<double>(n + 1));

  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d_inner));
  auto normal_matrix = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.normal(0.0, proj_std);
    return t;
  };
  p.w_delta = normal_matrix({d_inner, d_inner});
  p.b_delta = Tensor({d_inner});
  const double lo = std::log(kDeltaMin), hi = std::log(kDeltaMax);
  for (double& v : p.b_delta.values()) v = inverse_softplus(std::exp(rng.uniform(lo, hi)));
  p.w_b = normal_matrix({n_state, d_inner});
  p.w_c = normal_matrix({n_state, d_inner});
  p.d_skip = Tensor({d_inner}, 1.0);
  return p;
}

Discretized zoh_discretize(const Tensor& a, const Tensor& delta, const Tensor& b_seq) {
  if (a.rank() != 2 || delta.rank() != 2 || b_seq.rank() != 2 || delta.dim(1) != a.dim(0) ||
      b_seq.dim(0) != delta.dim(0) || b_seq.dim(1) != a.dim(1)) {
    throw DimensionError("zoh_discretize: A " + to_string(a.shape()) + ", delta " + to_string(delta.shape()) +
                         ", B " + to_string(b_seq.shape()));
  }
  const std::size_t L = delta.dim(0), D = a.dim(0), N = a.dim(1);
  Discretized out{Tensor({L, D, N}), Tensor({L, D, N})};
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      const double dt = delta[t * D + d];
      if (!(dt > 0.0)) {
        throw DomainError("zoh_discretize: step size must be positive (delta[" + std::to_string(t) + "," +
                          std::to_string(d) + "] = " + std::to_string(dt) + ")");
      }
      for (std::size_t n = 0; n < N; ++n) {
        const double an = a[d * N + n];
        out.abar[(t * D + d) * N + n] = std::exp(dt * an);
        out.bbar[(t * D + d) * N + n] = kernels::zoh_gain(dt, an) * b_seq[t * N + n];
      }
    }
  return out;
}

Projections selective_projections(const Tensor& x, const SsmParams& p) {
  const std::size_t D = p.inner(), N = p.state();
  if (x.rank() != 2 || x.dim(1) != D) {
    throw DimensionError("selective_projections: x " + to_string(x.shape()) + " vs D_inner " + std::to_string(D));
  }
  const std::size_t L = x.dim(0);
  Projections out{Tensor({L, D}), Tensor({L, N}), Tensor({L, N})};
  for (std::size_t t = 0; t < L; ++t) {
    const double* xt = x.data() + t * D;
    for (std::size_t d = 0; d < D; ++d) {
      double z = p.b_delta[d];
      for (std::size_t j = 0; j < D; ++j) z += p.w_delta[d * D + j] * xt[j];
      out.delta[t * D + d] = scalar::softplus(z);
    }
    for (std::size_t n = 0; n < N; ++n) {
      double bz = 0.0, cz = 0.0;
      for (std::size_t j = 0; j < D; ++j) {
        bz += p.w_b[n * D + j] * xt[j];
        cz += p.w_c[n * D + j] * xt[j];
      }
      out.b_seq[t * N + n] = bz;
      out.c_seq[t * N + n] = cz;
    }
  }
  return out;
}

ScanInputs prepare_scan(const Tensor& x, const SsmParams& p) {
  Projections proj = selective_projections(x, p);
  Discretized disc = zoh_discretize(p.transition(), proj.delta, proj.b_seq);
  const std::size_t L = x.dim(0), D = p.inner(), N = p.state();
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t n = 0; n < N; ++n) disc.bbar[(t * D + d) * N + n] *= x[t * D + d];
  return ScanInputs{std::move(disc.abar), std::move(disc.bbar), std::move(proj.c_seq), p.d_skip, x};
}

Tensor selective_scan(const ScanInputs& s) {
  if (s.abar.rank() != 3 || s.bbar_u.shape() != s.abar.shape() || s.u.rank() != 2) {
    throw DimensionError("selective_scan: inconsistent ScanInputs shapes");
  }
  const std::size_t L = s.abar.dim(0), D = s.abar.dim(1), N = s.abar.dim(2);
  if (s.u.shape() != Shape{L, D} || s.c_seq.shape() != Shape{L, N} || s.d_skip.shape() != Shape{D}) {
    throw DimensionError("selective_scan: inconsistent ScanInputs shapes");
  }
  Tensor y({L, D});
  std::vector<double> h(N);
  for (std::size_t d = 0; d < D; ++d) {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t t = 0; t < L; ++t) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t i = (t * D + d) * N + n;
        h[n] = s.abar[i] * h[n] + s.bbar_u[i];
        acc += s.c_seq[t * N + n] * h[n];
      }
      y[t * D + d] = acc + s.d_skip[d] * s.u[t * D + d];
    }
  }
  return y;
}

namespace {

Tensor reverse_rows(const Tensor& x) {
  const std::size_t L = x.dim(0), D = x.size() / std::max<std::size_t>(L, 1);
  Tensor r(x.shape());
  for (std::size_t t = 0; t < L; ++t) std::copy_n(x.data() + (L - 1 - t) * D, D, r.data() + t * D);
  return r;
}

}  // namespace

Tensor bidirectional_scan(const Tensor& x, const SsmParams& fwd, const SsmParams& bwd, bool shared_a) {
  if (fwd.a_log.shape() != bwd.a_log.shape() || fwd.w_delta.shape() != bwd.w_delta.shape() ||
      fwd.w_b.shape() != bwd.w_b.shape()) {
    throw DimensionError("bidirectional_scan: direction parameters differ in shape");
  }
  Tensor y = selective_scan(prepare_scan(x, fwd));
  SsmParams back = bwd;
  if (shared_a) back.a_log = fwd.a_log;
  Tensor yb = reverse_rows(selective_scan(prepare_scan(reverse_rows(x), back)));
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += yb[i];
  return y;
}

SsmVars bind(Tape& tape, const SsmParams& p, bool requires_grad) {
  return SsmVars{tape.leaf(p.a_log, requires_grad),  tape.leaf(p.w_delta, requires_grad),
                 tape.leaf(p.b_delta, requires_grad), tape.leaf(p.w_b, requires_grad),
                 tape.leaf(p.w_c, requires_grad),     tape.leaf(p.d_skip, requires_grad)};
}

Var selective_scan(const Var& u, const Var& delta, const Var& a, const Var& b, const Var& c, const Var& d) {
  const Shape& su = u.shape();
  if (su.size() != 3 || delta.shape() != su || a.shape().size() != 2 || a.shape()[0] != su[2]) {
    throw DimensionError("selective_scan: u " + to_string(su) + ", delta " + to_string(delta.shape()) + ", A " +
                         to_string(a.shape()));
  }
  const kernels::ScanDims dims{su[0], su[1], su[2], a.shape()[1]};
  const Shape sbc{dims.batch, dims.length, dims.state};
  if (b.shape() != sbc || c.shape() != sbc || d.shape() != Shape{dims.channels}) {
    throw DimensionError("selective_scan: B " + to_string(b.shape()) + ", C " + to_string(c.shape()) + ", D " +
                         to_string(d.shape()) + " for u " + to_string(su));
  }
  const auto backend = kernels::default_backend();
  auto args_of = [=](const Tape& t) {
    return kernels::ScanArgs{t.value(u).values(), t.value(delta).values(), t.value(a).values(),
                             t.value(b).values(), t.value(c).values(),     t.value(d).values()};
  };
  Tensor y(su);
  kernels::scan_forward(backend, dims, args_of(u.tape()), y.values());
  return u.tape().record("selective_scan", std::move(y), {u, delta, a, b, c, d},
                         [=](Tape& t, const Tensor& g) {
                           auto sink = [&](const Var& v) {
                             Tensor* s = t.grad_sink(v);
                             return s ? s->values() : std::span<double>{};
                           };
                           const kernels::ScanGrads grads{sink(u), sink(delta), sink(a), sink(b), sink(c), sink(d)};
                           kernels::scan_backward(backend, dims, args_of(t), g.values(), grads);
                         });
}

Var directional_scan(const Var& x, const SsmVars& p) {
  Var delta = ad::softplus(ad::linear(x, p.w_delta, p.b_delta));
  Var b = ad::linear(x, p.w_b);
  Var c = ad::linear(x, p.w_c);
  Var a = ad::neg(ad::exp(p.a_log));
  return selective_scan(x, delta, a, b, c, p.d_skip);
}

Var bidirectional_scan(const Var& x, const SsmVars& fwd, const SsmVars& bwd) {
  Var y_fwd = directional_scan(x, fwd);
  Var y_bwd = ad::flip(directional_scan(ad::flip(x, 1), bwd), 1);
  return ad::add(y_fwd, y_bwd);
}

ScalingReport scan_complexity_probe(std::span<const std::size_t> lengths, std::size_t d_inner, std::size_t n_state,
                                    std::size_t repeats, kernels::Backend backend, std::uint64_t seed) {
  if (lengths.size() < 3) throw DomainError("scan_complexity_probe: need at least 3 sequence lengths");
  if (!std::is_sorted(lengths.begin(), lengths.end())) {
    throw DomainError("scan_complexity_probe: lengths must be ascending");
  }
  if (repeats < 5) throw DomainError("scan_complexity_probe: repeats must be >= 5");
  Rng rng(seed);
  Rng init = rng.fork("params");
  const SsmParams fwd = s4d_init(d_inner, n_state, init);
  const SsmParams bwd = s4d_init(d_inner, n_state, init);
  const auto saved = kernels::default_backend();
  kernels::set_default_backend(backend);

  ScalingReport report;
  for (std::size_t len : lengths) {
    Rng xr = rng.fork(len);
    Tensor x({1, len, d_inner});
    for (double& v : x.values()) v = xr.normal();
    std::vector<double> times;
    // One untimed warm-up run.
    for (std::size_t r = 0; r <= repeats; ++r) {
      Tape tape;
      const SsmVars fv = bind(tape, fwd, false);
      const SsmVars bv = bind(tape, bwd, false);
      Var xv = tape.constant(x);
      const auto start = std::chrono::steady_clock::now();
      Var y = bidirectional_scan(xv, fv, bv);
      const auto stop = std::chrono::steady_clock::now();
      if (y.value().size() != x.size()) throw NumericError("scan_complexity_probe: unexpected output size");
      if (r > 0) times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }
    std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
    report.points.push_back({len, times[times.size() / 2]});
  }
  kernels::set_default_backend(saved);
  report.slope = loglog_slope(report.points);
  for (std::size_t i = 1; i < report.points.size(); ++i) {
    report.doubling_ratios.push_back(report.points[i].median_ms / report.points[i - 1].median_ms);
  }
  return report;
}

}  // namespace medmamba::ssm
