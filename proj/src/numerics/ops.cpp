#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <numbers>

#include "medmamba/autodiff.hpp"
#include "medmamba/errors.hpp"
#include "medmamba/kernels.hpp"

namespace medmamba {

namespace scalar {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * pdf;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

}  // namespace scalar

namespace ad {

namespace {

std::string shape_pair(const Var& a, const Var& b) {
  return to_string(a.shape()) + " and " + to_string(b.shape());
}

std::size_t last_dim(const Var& x, const char* op) {
  if (x.shape().empty()) throw DimensionError(std::string(op) + ": scalar input");
  return x.shape().back();
}

// Elementwise op; the derivative sees both input and output.
template <typename F, typename DF>
Var pointwise(const char* op, const Var& x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  Tensor yc = y;
  const Var xin = x;
  return x.tape().record(op, std::move(y), {x}, [xin, df, yc = std::move(yc)](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(xin);
    if (!gx) return;
    const Tensor& xv = t.value(xin);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * df(xv[i], yc[i]);
  });
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> a_stride;  // per output axis, 0 where broadcast
  std::vector<std::size_t> b_stride;
};

Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Broadcast bc;
  bc.out.assign(rank, 1);
  bc.a_stride.assign(rank, 0);
  bc.b_stride.assign(rank, 0);
  std::size_t sa = 1, sb = 1;
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t axis = rank - 1 - k;
    const std::size_t ea = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t eb = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) +
                           " are not broadcast-compatible");
    }
    bc.out[axis] = std::max(ea, eb);
    bc.a_stride[axis] = ea == 1 ? 0 : sa;
    bc.b_stride[axis] = eb == 1 ? 0 : sb;
    sa *= ea;
    sb *= eb;
  }
  return bc;
}

// Calls fn(i, ia, ib) for every output element i.
template <typename Fn>
void for_each_broadcast(const Broadcast& bc, std::size_t a_size, std::size_t b_size, Fn fn) {
  const std::size_t n = numel(bc.out);
  if (n == 0) return;
  if (a_size == n && b_size == n) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  if (a_size == n && b_size == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, 0);
    return;
  }
  if (a_size == 1 && b_size == n) {
    for (std::size_t i = 0; i < n; ++i) fn(i, 0, i);
    return;
  }
  const std::size_t rank = bc.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t axis = rank; axis-- > 0;) {
      ++idx[axis];
      ia += bc.a_stride[axis];
      ib += bc.b_stride[axis];
      if (idx[axis] < bc.out[axis]) break;
      ia -= bc.a_stride[axis] * idx[axis];
      ib -= bc.b_stride[axis] * idx[axis];
      idx[axis] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul, div };

Var binary(const char* op, BinaryKind kind, const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Broadcast bc = broadcast(av.shape(), bv.shape(), op);
  Tensor y(bc.out);
  for_each_broadcast(bc, av.size(), bv.size(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
    switch (kind) {
      case BinaryKind::add: y[i] = av[ia] + bv[ib]; break;
      case BinaryKind::sub: y[i] = av[ia] - bv[ib]; break;
      case BinaryKind::mul: y[i] = av[ia] * bv[ib]; break;
      case BinaryKind::div: y[i] = av[ia] / bv[ib]; break;
    }
  });
  return a.tape().record(op, std::move(y), {a, b}, [a, b, kind, bc](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_sink(a);
    Tensor* gb = t.grad_sink(b);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    for_each_broadcast(bc, av.size(), bv.size(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
      switch (kind) {
        case BinaryKind::add:
          if (ga) (*ga)[ia] += g[i];
          if (gb) (*gb)[ib] += g[i];
          break;
        case BinaryKind::sub:
          if (ga) (*ga)[ia] += g[i];
          if (gb) (*gb)[ib] -= g[i];
          break;
        case BinaryKind::mul:
          if (ga) (*ga)[ia] += g[i] * bv[ib];
          if (gb) (*gb)[ib] += g[i] * av[ia];
          break;
        case BinaryKind::div:
          if (ga) (*ga)[ia] += g[i] / bv[ib];
          if (gb) (*gb)[ib] -= g[i] * av[ia] / (bv[ib] * bv[ib]);
          break;
      }
    });
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_pair(a, b));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) y[i * n + j] += aip * bv[p * n + j];
    }
  return a.tape().record("matmul", std::move(y), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (Tensor* ga = t.grad_sink(a)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          (*ga)[i * k + p] += acc;
        }
    }
    if (Tensor* gb = t.grad_sink(b)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Var bmm(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1]) {
    throw DimensionError("bmm: incompatible shapes " + shape_pair(a, b));
  }
  const std::size_t batch = sa[0], m = sa[1], k = sa[2], n = sb[2];
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y({batch, m, n});
  for (std::size_t s = 0; s < batch; ++s) {
    const double* ap = av.data() + s * m * k;
    const double* bp = bv.data() + s * k * n;
    double* yp = y.data() + s * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = ap[i * k + p];
        for (std::size_t j = 0; j < n; ++j) yp[i * n + j] += aip * bp[p * n + j];
      }
  }
  return a.tape().record("bmm", std::move(y), {a, b}, [a, b, batch, m, k, n](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    Tensor* ga = t.grad_sink(a);
    Tensor* gb = t.grad_sink(b);
    for (std::size_t s = 0; s < batch; ++s) {
      const double* ap = av.data() + s * m * k;
      const double* bp = bv.data() + s * k * n;
      const double* gp = g.data() + s * m * n;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          if (ga) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += gp[i * n + j] * bp[p * n + j];
            (*ga)[s * m * k + i * k + p] += acc;
          }
          if (gb) {
            const double aip = ap[i * k + p];
            for (std::size_t j = 0; j < n; ++j) (*gb)[s * k * n + p * n + j] += aip * gp[i * n + j];
          }
        }
    }
  });
}

namespace {

Var linear_impl(const Var& x, const Var& w, const Var* bias) {
  const Shape& sw = w.shape();
  const std::size_t in = last_dim(x, "linear");
  if (sw.size() != 2 || sw[1] != in) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(sw));
  }
  const std::size_t out = sw[0];
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != out)) {
    throw DimensionError("linear: bias " + to_string(bias->shape()) + " vs weight " + to_string(sw));
  }
  const kernels::LinearDims dims{x.value().size() / in, in, out};
  Shape ys = x.shape();
  ys.back() = out;
  Tensor y(ys);
  const auto backend = kernels::default_backend();
  kernels::linear_forward(backend, dims, x.value().values(), w.value().values(),
                          bias ? bias->value().values() : std::span<const double>{}, y.values());
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  const Var bvar = bias ? *bias : Var{};
  return x.tape().record("linear", std::move(y), inputs, [x, w, bvar, dims, backend](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x)) {
      kernels::linear_backward_input(backend, dims, g.values(), t.value(w).values(), gx->values());
    }
    Tensor* gw = t.grad_sink(w);
    Tensor* gb = bvar.valid() ? t.grad_sink(bvar) : nullptr;
    if (gw || gb) {
      Tensor scratch;
      if (!gw) scratch = Tensor(t.value(w).shape());
      kernels::linear_backward_weight(backend, dims, g.values(), t.value(x).values(),
                                      gw ? gw->values() : scratch.values(),
                                      gb ? gb->values() : std::span<double>{});
    }
  });
}

}  // namespace

Var linear(const Var& x, const Var& w) { return linear_impl(x, w, nullptr); }
Var linear(const Var& x, const Var& w, const Var& bias) { return linear_impl(x, w, &bias); }

Var conv1d(const Var& x, const Var& w, std::size_t stride, Padding padding) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 2 && sx.size() != 3) throw DimensionError("conv1d: input must be [C,L] or [B,C,L], got " + to_string(sx));
  const bool batched = sx.size() == 3;
  const std::size_t batch = batched ? sx[0] : 1;
  const std::size_t cin = sx[sx.size() - 2];
  const std::size_t len = sx.back();
  if (sw.size() != 3 || sw[1] != cin) {
    throw DimensionError("conv1d: input " + to_string(sx) + " vs weight " + to_string(sw));
  }
  const std::size_t cout = sw[0];
  const std::size_t k = sw[2];
  if (k < 1 || stride < 1) throw DomainError("conv1d: kernel and stride must be >= 1");
  const std::size_t pad_total = padding == Padding::symmetric_zero ? k - 1 : 0;
  const std::size_t pad_left = pad_total / 2;
  if (len + pad_total < k) {
    throw DimensionError("conv1d: empty output (length " + std::to_string(len) + " + padding " +
                         std::to_string(pad_total) + " < kernel " + std::to_string(k) + ")");
  }
  const std::size_t lout = (len + pad_total - k) / stride + 1;
  Shape ys = batched ? Shape{batch, cout, lout} : Shape{cout, lout};
  Tensor y(ys);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  auto src = [=](std::size_t to, std::size_t j) -> std::ptrdiff_t {
    return static_cast<std::ptrdiff_t>(to * stride + j) - static_cast<std::ptrdiff_t>(pad_left);
  };
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t to = 0; to < lout; ++to) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t j = 0; j < k; ++j) {
            const auto s = src(to, j);
            if (s < 0 || s >= static_cast<std::ptrdiff_t>(len)) continue;
            acc += wv[(o * cin + c) * k + j] * xv[(b * cin + c) * len + static_cast<std::size_t>(s)];
          }
        y[(b * cout + o) * lout + to] = acc;
      }
  return x.tape().record("conv1d", std::move(y), {x, w},
                         [=](Tape& t, const Tensor& g) {
                           const Tensor& xv = t.value(x);
                           const Tensor& wv = t.value(w);
                           Tensor* gx = t.grad_sink(x);
                           Tensor* gw = t.grad_sink(w);
                           for (std::size_t b = 0; b < batch; ++b)
                             for (std::size_t o = 0; o < cout; ++o)
                               for (std::size_t to = 0; to < lout; ++to) {
                                 const double go = g[(b * cout + o) * lout + to];
                                 for (std::size_t c = 0; c < cin; ++c)
                                   for (std::size_t j = 0; j < k; ++j) {
                                     const auto s = src(to, j);
                                     if (s < 0 || s >= static_cast<std::ptrdiff_t>(len)) continue;
                                     const std::size_t xi = (b * cin + c) * len + static_cast<std::size_t>(s);
                                     const std::size_t wi = (o * cin + c) * k + j;
                                     if (gx) (*gx)[xi] += go * wv[wi];
                                     if (gw) (*gw)[wi] += go * xv[xi];
                                   }
                               }
                         });
}

Var depthwise_conv1d(const Var& x, const Var& w) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 3 || sw.size() != 2 || sw[0] != sx[2]) {
    throw DimensionError("depthwise_conv1d: input " + to_string(sx) + " vs weight " + to_string(sw));
  }
  const std::size_t batch = sx[0], len = sx[1], ch = sx[2], k = sw[1];
  if (k % 2 == 0) throw DomainError("depthwise_conv1d: centered kernel needs odd size, got " + std::to_string(k));
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  const auto slen = static_cast<std::ptrdiff_t>(len);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  Tensor y(sx);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::ptrdiff_t t = 0; t < slen; ++t)
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t s = t + static_cast<std::ptrdiff_t>(j) - half;
        if (s < 0 || s >= slen) continue;
        const double* xr = xv.data() + (b * len + static_cast<std::size_t>(s)) * ch;
        double* yr = y.data() + (b * len + static_cast<std::size_t>(t)) * ch;
        for (std::size_t d = 0; d < ch; ++d) yr[d] += wv[d * k + j] * xr[d];
      }
  return x.tape().record("depthwise_conv1d", std::move(y), {x, w}, [=](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    Tensor* gx = t.grad_sink(x);
    Tensor* gw = t.grad_sink(w);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::ptrdiff_t tt = 0; tt < slen; ++tt)
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t s = tt + static_cast<std::ptrdiff_t>(j) - half;
          if (s < 0 || s >= slen) continue;
          const std::size_t xo = (b * len + static_cast<std::size_t>(s)) * ch;
          const std::size_t go = (b * len + static_cast<std::size_t>(tt)) * ch;
          for (std::size_t d = 0; d < ch; ++d) {
            if (gx) (*gx)[xo + d] += g[go + d] * wv[d * k + j];
            if (gw) (*gw)[d * k + j] += g[go + d] * xv[xo + d];
          }
        }
  });
}

Var gelu(const Var& x) {
  return pointwise("gelu", x, scalar::gelu, [](double xv, double) { return scalar::gelu_grad(xv); });
}

Var silu(const Var& x) {
  return pointwise("silu", x, scalar::silu, [](double xv, double) { return scalar::silu_grad(xv); });
}

Var softplus(const Var& x) {
  return pointwise("softplus", x, scalar::softplus,
                   [](double xv, double) { return xv > 30.0 ? 1.0 : scalar::sigmoid(xv); });
}

Var tanh(const Var& x) {
  return pointwise("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& x) {
  return pointwise("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
  return pointwise("log", x, [](double v) { return std::log(v); }, [](double xv, double) { return 1.0 / xv; });
}

Var neg(const Var& x) {
  return pointwise("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Var scale(const Var& x, double factor) {
  return pointwise("scale", x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Var add(const Var& a, const Var& b) { return binary("add", BinaryKind::add, a, b); }
Var sub(const Var& a, const Var& b) { return binary("sub", BinaryKind::sub, a, b); }
Var mul(const Var& a, const Var& b) { return binary("mul", BinaryKind::mul, a, b); }
Var div(const Var& a, const Var& b) { return binary("div", BinaryKind::div, a, b); }

Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::size_t d = last_dim(x, "layernorm");
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layernorm: input " + to_string(x.shape()) + " vs affine " + to_string(gamma.shape()) +
                         "/" + to_string(beta.shape()));
  }
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  const std::size_t rows = xv.size() / d;
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(rows);
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (xr[i] - mu) * is;
      xhat[r * d + i] = h;
      y[r * d + i] = h * gv[i] + bv[i];
    }
  }
  return x.tape().record(
      "layernorm", std::move(y), {x, gamma, beta},
      [x, gamma, beta, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
        const Tensor& gv = t.value(gamma);
        Tensor* gx = t.grad_sink(x);
        Tensor* gg = t.grad_sink(gamma);
        Tensor* gb = t.grad_sink(beta);
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * d;
          const double* hr = xhat.data() + r * d;
          double mean_dx = 0.0, mean_dxh = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            if (gg) (*gg)[i] += gr[i] * hr[i];
            if (gb) (*gb)[i] += gr[i];
            dxhat[i] = gr[i] * gv[i];
            mean_dx += dxhat[i];
            mean_dxh += dxhat[i] * hr[i];
          }
          if (!gx) continue;
          mean_dx /= static_cast<double>(d);
          mean_dxh /= static_cast<double>(d);
          for (std::size_t i = 0; i < d; ++i) {
            (*gx)[r * d + i] += inv_std[r] * (dxhat[i] - mean_dx - hr[i] * mean_dxh);
          }
        }
      });
}

Var batchnorm1d(const Var& x, const Var& gamma, const Var& beta, BnState& state, Mode mode) {
  const Shape& sx = x.shape();
  if (sx.size() != 3) throw DimensionError("batchnorm1d: expected [B,D,L], got " + to_string(sx));
  const std::size_t batch = sx[0], feat = sx[1], len = sx[2];
  if (gamma.shape() != Shape{feat} || beta.shape() != Shape{feat} || state.running_mean.shape() != Shape{feat}) {
    throw DimensionError("batchnorm1d: feature count mismatch for input " + to_string(sx));
  }
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  const double count = static_cast<double>(batch * len);
  std::vector<double> mean(feat), inv_std(feat);
  if (mode == Mode::train) {
    for (std::size_t f = 0; f < feat; ++f) {
      double mu = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len; ++l) mu += xv[(b * feat + f) * len + l];
      mu /= count;
      double var = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len; ++l) {
          const double c = xv[(b * feat + f) * len + l] - mu;
          var += c * c;
        }
      const double pop_var = var / count;
      const double unbiased = count > 1 ? var / (count - 1.0) : pop_var;
      mean[f] = mu;
      inv_std[f] = 1.0 / std::sqrt(pop_var + state.eps);
      state.running_mean[f] = (1.0 - state.momentum) * state.running_mean[f] + state.momentum * mu;
      state.running_var[f] = (1.0 - state.momentum) * state.running_var[f] + state.momentum * unbiased;
    }
    ++state.updates;
  } else {
    if (state.updates == 0) {
      static std::atomic<bool> warned{false};
      if (!warned.exchange(true)) {
        std::cerr << "warning: batchnorm1d evaluated before any training step; using initial statistics\n";
      }
    }
    for (std::size_t f = 0; f < feat; ++f) {
      mean[f] = state.running_mean[f];
      inv_std[f] = 1.0 / std::sqrt(state.running_var[f] + state.eps);
    }
  }
  Tensor xhat(sx);
  Tensor y(sx);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t f = 0; f < feat; ++f)
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t i = (b * feat + f) * len + l;
        xhat[i] = (xv[i] - mean[f]) * inv_std[f];
        y[i] = xhat[i] * gv[f] + bv[f];
      }
  const bool batch_stats = mode == Mode::train;
  return x.tape().record(
      "batchnorm1d", std::move(y), {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
        const Tensor& gv = t.value(gamma);
        Tensor* gx = t.grad_sink(x);
        Tensor* gg = t.grad_sink(gamma);
        Tensor* gb = t.grad_sink(beta);
        for (std::size_t f = 0; f < feat; ++f) {
          double sum_g = 0.0, sum_gh = 0.0;
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t l = 0; l < len; ++l) {
              const std::size_t i = (b * feat + f) * len + l;
              sum_g += g[i];
              sum_gh += g[i] * xhat[i];
            }
          if (gg) (*gg)[f] += sum_gh;
          if (gb) (*gb)[f] += sum_g;
          if (!gx) continue;
          const double scale = gv[f] * inv_std[f];
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t l = 0; l < len; ++l) {
              const std::size_t i = (b * feat + f) * len + l;
              if (batch_stats) {
                (*gx)[i] += scale * (g[i] - sum_g / count - xhat[i] * sum_gh / count);
              } else {
                (*gx)[i] += scale * g[i];
              }
            }
        }
      });
}

Var softmax(const Var& x, std::size_t axis) {
  const Shape& sx = x.shape();
  if (axis >= sx.size()) throw DimensionError("softmax: axis out of range for " + to_string(sx));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sx[i];
  for (std::size_t i = axis + 1; i < sx.size(); ++i) inner *= sx[i];
  const std::size_t n = sx[axis];
  const Tensor& xv = x.value();
  Tensor y(sx);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        y[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) y[base + j * inner] /= z;
    }
  Tensor yc = y;
  return x.tape().record("softmax", std::move(y), {x}, [=, yc = std::move(yc)](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * yc[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t i = base + j * inner;
          (*gx)[i] += yc[i] * (g[i] - dot);
        }
      }
  });
}

Var log_softmax(const Var& x) {
  const std::size_t n = last_dim(x, "log_softmax");
  const Tensor& xv = x.value();
  const std::size_t rows = xv.size() / n;
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = xr[j] - lse;
  }
  Tensor yc = y;
  return x.tape().record("log_softmax", std::move(y), {x}, [=, yc = std::move(yc)](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[r * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t i = r * n + j;
        (*gx)[i] += g[i] - std::exp(yc[i]) * gsum;
      }
    }
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  return x.tape().record("sum", Tensor::scalar(acc), {x}, [x](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    for (double& v : gx->values()) v += g[0];
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", std::move(y), {x}, [x](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

Var transpose(const Var& x, std::size_t axis0, std::size_t axis1) {
  const Shape& sx = x.shape();
  if (axis0 >= sx.size() || axis1 >= sx.size()) throw DimensionError("transpose: axis out of range for " + to_string(sx));
  Shape sy = sx;
  std::swap(sy[axis0], sy[axis1]);
  const std::size_t rank = sx.size();
  std::vector<std::size_t> xstride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) xstride[i - 1] = xstride[i] * sx[i];
  // Input stride for each output axis.
  std::vector<std::size_t> perm_stride = xstride;
  std::swap(perm_stride[axis0], perm_stride[axis1]);
  const std::size_t n = numel(sy);
  std::vector<std::size_t> src(n);
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
      src[i] = off;
      for (std::size_t a = rank; a-- > 0;) {
        ++idx[a];
        off += perm_stride[a];
        if (idx[a] < sy[a]) break;
        off -= perm_stride[a] * idx[a];
        idx[a] = 0;
      }
    }
  }
  const Tensor& xv = x.value();
  Tensor y(sy);
  for (std::size_t i = 0; i < n; ++i) y[i] = xv[src[i]];
  return x.tape().record("transpose", std::move(y), {x}, [x, src = std::move(src)](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[src[i]] += g[i];
  });
}

Var slice_last(const Var& x, std::size_t start, std::size_t len) {
  const std::size_t d = last_dim(x, "slice_last");
  if (start + len > d) throw DimensionError("slice_last: range exceeds last axis of " + to_string(x.shape()));
  const Tensor& xv = x.value();
  const std::size_t rows = xv.size() / d;
  Shape sy = x.shape();
  sy.back() = len;
  Tensor y(sy);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.data() + r * d + start, len, y.data() + r * len);
  return x.tape().record("slice_last", std::move(y), {x}, [=](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < len; ++i) (*gx)[r * d + start + i] += g[r * len + i];
  });
}

Var concat_last(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    const std::size_t w = last_dim(p, "concat_last");
    s.pop_back();
    if (s != lead) throw DimensionError("concat_last: leading shapes differ");
    widths.push_back(w);
    total += w;
  }
  const std::size_t rows = numel(lead);
  Shape sy = lead;
  sy.push_back(total);
  Tensor y(sy);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.data() + r * widths[k], widths[k], y.data() + r * total + col);
    col += widths[k];
  }
  return parts[0].tape().record("concat_last", std::move(y), parts, [=](Tape& t, const Tensor& g) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (Tensor* gp = t.grad_sink(parts[k])) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < widths[k]; ++i) (*gp)[r * widths[k] + i] += g[r * total + col + i];
      }
      col += widths[k];
    }
  });
}

Var flip(const Var& x, std::size_t axis) {
  const Shape& sx = x.shape();
  if (axis >= sx.size()) throw DimensionError("flip: axis out of range for " + to_string(sx));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sx[i];
  for (std::size_t i = axis + 1; i < sx.size(); ++i) inner *= sx[i];
  const std::size_t n = sx[axis];
  const Tensor& xv = x.value();
  Tensor y(sx);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < n; ++j)
      std::copy_n(xv.data() + (o * n + (n - 1 - j)) * inner, inner, y.data() + (o * n + j) * inner);
  return x.tape().record("flip", std::move(y), {x}, [=](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < inner; ++i)
          (*gx)[(o * n + (n - 1 - j)) * inner + i] += g[(o * n + j) * inner + i];
  });
}

}  // namespace ad
}  // namespace medmamba
