// End-to-end acceptance run: one PASS/FAIL line per criterion.
// Usage: acceptance [name-substring ...]   (no arguments runs everything)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "medmamba/analysis.hpp"
#include "medmamba/checkpoint.hpp"
#include "medmamba/data.hpp"
#include "medmamba/model.hpp"
#include "medmamba/rng.hpp"
#include "medmamba/scaling.hpp"
#include "medmamba/ssm.hpp"
#include "medmamba/training.hpp"

using namespace medmamba;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.channels = 3;
  c.length = 30;
  c.classes = 2;
  c.d_model = 8;
  c.n_layer = 1;
  c.expand = 2;
  c.ffn_expand = 2;
  c.d_state = 4;
  c.strides = {3, 5};
  c.rho = 2;
  return c;
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  training::GradCheckOptions opt;
  opt.tol = 1e-4;
  const auto report = training::model_grad_check(tiny_config(), opt);
  const auto* worst = report.worst();
  return {report.passed && worst && worst->rel_error <= 1e-4,
          fmt("%zu tensors, worst %s rel %.2e", report.entries.size(), worst ? worst->name.c_str() : "-",
              worst ? worst->rel_error : 0.0)};
}

// Plain recurrence; the ZOH gain uses expm1 so the oracle itself keeps full precision.
Tensor unrolled_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                     const Tensor& d_skip) {
  const std::size_t L = u.dim(0), D = u.dim(1), N = a.dim(1);
  Tensor y({L, D});
  for (std::size_t d = 0; d < D; ++d) {
    std::vector<double> h(N, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
      double acc = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const double an = a[d * N + n], dt = delta[t * D + d];
        h[n] = std::exp(dt * an) * h[n] + std::expm1(dt * an) / an * b[t * N + n] * u[t * D + d];
        acc += c[t * N + n] * h[n];
      }
      y[t * D + d] = acc + d_skip[d] * u[t * D + d];
    }
  }
  return y;
}

Outcome scan_oracle() {
  Rng master(2025);
  double worst = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    Rng rng = master.fork(i);
    const std::size_t L = 1 + rng.below(16), D = 1 + rng.below(4), N = 1 + rng.below(4);
    ssm::SsmParams p = ssm::s4d_init(D, N, rng);
    p.w_delta = randn({D, D}, rng);
    p.d_skip = randn({D}, rng);
    const Tensor x = randn({L, D}, rng);
    const auto pr = ssm::selective_projections(x, p);
    const Tensor want = unrolled_scan(x, pr.delta, p.transition(), pr.b_seq, pr.c_seq, p.d_skip);
    worst = std::max(worst, max_abs_diff(ssm::selective_scan(ssm::prepare_scan(x, p)), want));
    Tape tape;
    const Var fused = ssm::selective_scan(tape.constant(x.reshaped({1, L, D})), tape.constant(pr.delta.reshaped({1, L, D})),
                                          tape.constant(p.transition()), tape.constant(pr.b_seq.reshaped({1, L, N})),
                                          tape.constant(pr.c_seq.reshaped({1, L, N})), tape.constant(p.d_skip));
    worst = std::max(worst, max_abs_diff(fused.value().reshaped({L, D}), want));
  }
  return {worst <= 1e-12, fmt("max |diff| %.2e over 100 instances", worst)};
}

Outcome linear_complexity() {
  ModelConfig c;
  c.d_model = 64;
  const std::vector<std::size_t> lens{1024, 2048, 4096, 8192};
  const auto rep = measure_scaling(c, lens, 7);
  bool ok = rep.slope >= 0.9 && rep.slope <= 1.15;
  std::string ratios;
  for (double r : rep.doubling_ratios) {
    ok = ok && r >= 1.8 && r <= 2.6;
    ratios += fmt(" %.2f", r);
  }
  return {ok, fmt("slope %.3f, doubling ratios%s, %.1f ms at L=8192", rep.slope, ratios.c_str(),
                  rep.points.back().median_ms)};
}

Outcome token_counts() {
  ModelConfig c;
  c.length = 256;
  c.strides = {5, 10, 25};
  std::vector<std::size_t> counts, shapes;
  model::Model m(c, 41);
  Tape tape;
  const auto bound = m.bind(tape, false);
  Rng rng(1);
  const Var x = tape.constant(randn({1, 256, c.channels}, rng));
  for (std::size_t s = 0; s < 3; ++s) {
    counts.push_back(c.tokens(s));
    shapes.push_back(model::embed_scale(x, m.stem(bound, s), c.strides[s], m.batchnorm()[s], Mode::eval).value().dim(1));
  }
  const std::vector<std::size_t> want{51, 25, 10};
  return {counts == want && shapes == want,
          fmt("tokens {%zu, %zu, %zu}, stem outputs {%zu, %zu, %zu}", counts[0], counts[1], counts[2], shapes[0],
              shapes[1], shapes[2])};
}

Outcome scale_mismatch() {
  const std::vector<double> s{5, 10, 25};
  const double closed = analysis::worst_case_mismatch(s);
  double grid = 0;
  const std::size_t n = 1000000;
  for (std::size_t i = 0; i <= n; ++i) {
    const double tau = 5.0 + 20.0 * static_cast<double>(i) / static_cast<double>(n);
    double best = 1e300;
    for (double sm : s) best = std::min(best, std::abs(std::log(tau) - std::log(sm)));
    grid = std::max(grid, best);
  }
  const double half_ln = 0.5 * std::log(2.5);
  return {std::abs(closed - grid) <= 1e-6 && std::abs(closed - half_ln) <= 1e-12,
          fmt("closed form %.9f, grid max %.9f, 1/2 ln 2.5 = %.9f", closed, grid, half_ln)};
}

double norm2(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<double> apply(const Tensor& m, const Tensor& v) {
  const std::size_t r = m.dim(0), c = m.dim(1);
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += m[i * c + j] * v[j];
  return out;
}

Outcome noise_bound() {
  Rng rng(77);
  std::size_t violations = 0, checked = 0;
  double worst_gap = -1e300;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t c = 2 + rng.below(8), r = 1 + rng.below(c);
    const Tensor m = randn({r, c}, rng, rng.uniform(0.1, 2.0));
    const Tensor s = randn({c}, rng), n = randn({c}, rng, rng.uniform(0.01, 3.0));
    std::vector<double> sv(s.values().begin(), s.values().end()), nv(n.values().begin(), n.values().end());
    const double ms = norm2(apply(m, s)), mn = norm2(apply(m, n));
    const double eps = std::max(0.0, 1.0 - ms / norm2(sv));
    const double gamma = mn / norm2(nv);
    if (ms == 0.0 || eps >= 1.0) continue;
    ++checked;
    const double lhs = mn / ms, rhs = gamma / (1.0 - eps) * norm2(nv) / norm2(sv);
    const auto lib = analysis::noise_suppression_bound(m, s, n);
    worst_gap = std::max(worst_gap, lhs - rhs);
    if (lhs > rhs + 1e-12 * std::max(1.0, rhs) || !lib.holds || std::abs(lib.lhs - lhs) > 1e-12 * std::max(1.0, lhs)) ++violations;
  }
  return {violations == 0 && checked >= 990,
          fmt("%zu constructions checked, %zu violations, max lhs-rhs %.2e", checked, violations, worst_gap)};
}

Tensor random_psd(std::size_t c, std::size_t rank, Rng& rng, double scale) {
  const Tensor g = randn({c, rank}, rng, scale);
  Tensor out({c, c});
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t k = 0; k < rank; ++k) out[i * c + j] += g[i * rank + k] * g[j * rank + k];
  return out;
}

// Rows orthonormalized by Gram-Schmidt.
Tensor orthonormal_rows(std::size_t r, std::size_t c, Rng& rng) {
  Tensor q = randn({r, c}, rng);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      double dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += q[i * c + j] * q[k * c + j];
      for (std::size_t j = 0; j < c; ++j) q[i * c + j] -= dot * q[k * c + j];
    }
    double nrm = 0;
    for (std::size_t j = 0; j < c; ++j) nrm += q[i * c + j] * q[i * c + j];
    nrm = std::sqrt(nrm);
    for (std::size_t j = 0; j < c; ++j) q[i * c + j] /= nrm;
  }
  return q;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < k; ++l)
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += a[i * k + l] * b[l * m + j];
  return out;
}

Outcome optimal_mixer_check() {
  Rng rng(2);
  std::size_t beaten = 0, mixers = 0;
  double worst_formula = 0, worst_margin = 1e300, worst_white = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t c = 2 + rng.below(7);
    analysis::MixerInputs in;
    in.sigma_s = random_psd(c, 1 + rng.below(c), rng, rng.uniform(0.3, 2.0));
    in.sigma_n = random_psd(c, 1 + rng.below(c), rng, rng.uniform(0.1, 1.0));
    in.sigma2 = rng.uniform(0.05, 1.0);
    in.rank = 1 + rng.below(c);
    const auto opt = analysis::optimal_mixer(in);
    double formula = 0;
    for (std::size_t i = 0; i < in.rank; ++i) formula += 0.5 * std::log1p(opt.eigenvalues[i]);
    worst_formula = std::max({worst_formula, std::abs(opt.mi - formula), std::abs(analysis::mixer_mi(opt.mixer, in) - formula)});
    worst_white = std::max(worst_white, analysis::whitening_residual(opt.mixer, in));

    Tensor w = in.sigma_n;
    for (std::size_t i = 0; i < c; ++i) w[i * c + i] += in.sigma2;
    const Tensor w_isqrt = analysis::inverse_sqrt_pd(w);
    for (int k = 0; k < 200; ++k) {
      const Tensor m = matmul(orthonormal_rows(in.rank, c, rng), w_isqrt);
      const double mi = analysis::mixer_mi(m, in);
      ++mixers;
      worst_margin = std::min(worst_margin, opt.mi - mi);
      if (mi > opt.mi + 1e-9) ++beaten;
    }
  }
  return {beaten == 0 && worst_formula <= 1e-9 && worst_white <= 1e-8,
          fmt("%zu random mixers, %zu beat the optimum, min margin %.2e, |MI - 1/2 sum ln(1+lambda)| %.2e", mixers,
              beaten, worst_margin, worst_formula)};
}

Outcome sci_dic_sanity() {
  Rng rng(5);
  // Rank one: x = g f^T.
  const Tensor g = randn({6}, rng), f = randn({40}, rng);
  Tensor rank1({6, 40});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t t = 0; t < 40; ++t) rank1[i * 40 + t] = g[i] * f[t];
  const double sci1 = analysis::sci(rank1);
  Tensor same({5, 40});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t t = 0; t < 40; ++t) same[i * 40 + t] = f[t];
  const double dic0 = analysis::dic(same).dic;

  std::vector<double> synth, noise;
  for (std::uint64_t d = 0; d < 50; ++d) {
    data::CentralizedOptions o;
    o.subjects = 1;
    o.seed = 500 + d;
    synth.push_back(analysis::sci(data::channels_first(data::synth_centralized(o).recordings[0].values)));
    Rng nr(900 + d);
    noise.push_back(analysis::sci(randn({o.channels, o.length}, nr)));
  }
  std::sort(synth.begin(), synth.end());
  std::sort(noise.begin(), noise.end());
  const double ms = 0.5 * (synth[24] + synth[25]), mn = 0.5 * (noise[24] + noise[25]);
  return {sci1 == 1.0 && dic0 == 0.0 && ms > mn,
          fmt("rank-1 SCI %.17g, identical-channel DIC %.17g, median SCI synth %.4f vs noise %.4f", sci1, dic0, ms, mn)};
}

// Desk-scale runs.
constexpr std::size_t kMultiscaleSubjects = 80;
constexpr std::size_t kMultiscaleWindows = 4;
constexpr double kMultiscaleDrift = 0.3;
constexpr double kMultiscaleNuisance = 2.0;
constexpr std::uint64_t kAblationSeeds[] = {41, 42, 43};

ModelConfig desk_model(std::size_t channels, std::size_t length, std::size_t classes) {
  ModelConfig c;
  c.channels = channels;
  c.length = length;
  c.classes = classes;
  c.d_model = 32;
  c.n_layer = 2;
  return c;
}

training::TrainConfig desk_training(std::uint64_t seed) {
  training::TrainConfig t;
  t.epochs = 30;
  t.batch_size = 16;
  t.lr_peak = 2e-3;
  t.warmup_epochs = 5;
  t.seed = seed;
  return t;
}

struct RunResult {
  double val_acc = 0, test_acc = 0;
};

// Validation accuracy of the restored best checkpoint, plus its test accuracy.
RunResult train_once(const std::vector<data::Recording>& recs, const ModelConfig& mc, std::uint64_t seed) {
  training::DataOptions d;
  d.length = d.hop = mc.length;
  auto prep = training::prepare_data(recs, d, 41);
  model::Model m(mc, seed);
  const auto r = training::train_loop(m, prep.train, prep.val, desk_training(seed));
  return {r.best_val.accuracy, training::compute_metrics(training::evaluate(m, prep.test), prep.test.labels).accuracy};
}

Outcome desk_scale_learning() {
  data::CentralizedOptions co;
  co.subjects = 40;
  co.channels = 8;
  co.length = 256;
  co.windows_per_subject = 4;
  co.seed = 41;
  const auto central = train_once(data::synth_centralized(co).recordings, desk_model(8, 256, 2), 41);

  data::MultiscaleOptions mo;
  mo.subjects = kMultiscaleSubjects;
  mo.windows_per_subject = kMultiscaleWindows;
  mo.drift = kMultiscaleDrift;
  mo.nuisance = kMultiscaleNuisance;
  mo.seed = 41;
  const auto ms = data::synth_multiscale(mo).recordings;
  ModelConfig full = desk_model(mo.channels, mo.length, 4);
  ModelConfig single = full;
  single.strides = {5};
  double full_val = 0, single_val = 0, full_test = 0, single_test = 0;
  std::string per_seed;
  for (std::uint64_t seed : kAblationSeeds) {
    const auto f = train_once(ms, full, seed), s = train_once(ms, single, seed);
    full_val += f.val_acc;
    single_val += s.val_acc;
    full_test += f.test_acc;
    single_test += s.test_acc;
    per_seed += fmt(" %.3f/%.3f", f.val_acc, s.val_acc);
  }
  const double n = static_cast<double>(std::size(kAblationSeeds));
  const double gap = 100.0 * (full_val - single_val) / n;
  return {central.val_acc >= 0.95 && gap >= 5.0,
          fmt("centralized val acc %.3f (test %.3f); multiscale mean val acc {5,10,25} %.3f vs {5} %.3f, gap %.1f pts "
              "(per seed%s; test %.3f vs %.3f)",
              central.val_acc, central.test_acc, full_val / n, single_val / n, gap, per_seed.c_str(), full_test / n,
              single_test / n)};
}

Outcome reversal_equivariance() {
  ModelConfig c = tiny_config();
  model::Model m(c, 7);
  Rng noise(8);
  for (auto& p : m.parameters()) {
    if (p.name.find("A_log") == std::string::npos)
      for (double& v : p.value.values()) v += 0.3 * noise.normal();
  }
  const std::string pre = "block0.0";
  for (const char* f : {".A_log", ".W_delta", ".b_delta", ".W_B", ".W_C", ".D"})
    m.parameter(pre + ".ssm_bwd" + f) = m.parameter(pre + ".ssm_fwd" + f);
  Tensor& dw = m.parameter(pre + ".dwconv.w");
  const std::size_t k = dw.dim(1);
  for (std::size_t d = 0; d < dw.dim(0); ++d)
    for (std::size_t j = 0; j < k / 2; ++j) dw[d * k + (k - 1 - j)] = dw[d * k + j];
  Tape tape;
  const auto bound = m.bind(tape, false);
  const Var h = tape.constant(randn({3, 17, c.d_model}, noise));
  const Var lhs = model::bimamba_block(ad::flip(h, 1), m.block(bound, 0, 0), 0.0, Mode::eval, noise);
  const Var rhs = ad::flip(model::bimamba_block(h, m.block(bound, 0, 0), 0.0, Mode::eval, noise), 1);
  const double diff = max_abs_diff(lhs.value(), rhs.value());
  return {diff <= 1e-10, fmt("max |block(flip h) - flip(block h)| = %.2e", diff)};
}

Outcome metrics_oracle() {
  Rng rng(31);
  std::size_t mismatches = 0;
  double worst_auc = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(50), k = 2 + rng.below(4);
    Tensor logits({n, k});
    for (double& v : logits.values()) v = static_cast<double>(rng.below(5)) * 0.5;
    std::vector<std::size_t> y(n);
    for (auto& l : y) l = rng.below(k);
    const auto got = training::compute_metrics(logits, y);

    std::vector<std::size_t> pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (logits[i * k + c] > logits[i * k + best]) best = c;
      pred[i] = best;
    }
    std::vector<std::vector<double>> cm(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < n; ++i) cm[y[i]][pred[i]] += 1;
    double acc = 0, p = 0, r = 0, f1 = 0, used = 0;
    for (std::size_t c = 0; c < k; ++c) acc += cm[c][c];
    acc /= static_cast<double>(n);
    for (std::size_t c = 0; c < k; ++c) {
      double row = 0, col = 0;
      for (std::size_t j = 0; j < k; ++j) row += cm[c][j], col += cm[j][c];
      if (row == 0 && col == 0) continue;
      used += 1;
      const double pc = col > 0 ? cm[c][c] / col : 0.0, rc = row > 0 ? cm[c][c] / row : 0.0;
      p += pc;
      r += rc;
      f1 += pc + rc > 0 ? 2 * pc * rc / (pc + rc) : 0.0;
    }
    p /= used;
    r /= used;
    f1 /= used;

    double auc = 0, present = 0;
    for (std::size_t c = 0; c < k; ++c) {
      double wins = 0, pairs = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (y[i] != c) continue;
        const double si = logits[i * k + c] - std::log(std::accumulate(
                              logits.data() + i * k, logits.data() + (i + 1) * k, 0.0,
                              [](double s, double v) { return s + std::exp(v); }));
        for (std::size_t j = 0; j < n; ++j) {
          if (y[j] == c) continue;
          const double sj = logits[j * k + c] - std::log(std::accumulate(
                                logits.data() + j * k, logits.data() + (j + 1) * k, 0.0,
                                [](double s, double v) { return s + std::exp(v); }));
          pairs += 1;
          wins += std::abs(si - sj) < 1e-13 ? 0.5 : (si > sj ? 1.0 : 0.0);
        }
      }
      if (std::count(y.begin(), y.end(), c) == 0) continue;
      present += 1;
      if (pairs > 0) auc += wins / pairs;
    }
    const bool has_auc = present >= 2;
    if (got.accuracy != acc || got.precision != p || got.recall != r || got.f1 != f1 || got.auroc.has_value() != has_auc) {
      ++mismatches;
      continue;
    }
    if (has_auc) {
      worst_auc = std::max(worst_auc, std::abs(*got.auroc - auc / present));
      if (std::abs(*got.auroc - auc / present) > 1e-12) ++mismatches;
    }
  }
  return {mismatches == 0, fmt("1000 cases, %zu mismatches, max AUROC diff %.2e", mismatches, worst_auc)};
}

Outcome determinism_persistence() {
  ModelConfig c = tiny_config();
  data::CentralizedOptions o;
  o.subjects = 10;
  o.channels = 3;
  o.length = 30;
  o.windows_per_subject = 2;
  const auto recs = data::synth_centralized(o).recordings;
  training::DataOptions d;
  d.length = d.hop = 30;
  training::TrainConfig t;
  t.epochs = 3;
  t.batch_size = 4;
  t.warmup_epochs = 1;
  t.lr_peak = 3e-3;

  auto run = [&](model::Model& m) {
    auto prep = training::prepare_data(recs, d, 41);
    return training::train_loop(m, prep.train, prep.val, t);
  };
  bool same = true;
  for (bool dropout : {false, true}) {
    ModelConfig cc = c;
    if (!dropout) cc.p_ch = cc.p_do = cc.p_dp = 0.0;
    model::Model a(cc, 41), b(cc, 41);
    const auto ra = run(a), rb = run(b);
    for (std::size_t e = 0; e < ra.history.size(); ++e) {
      same = same && ra.history[e].train_loss == rb.history[e].train_loss && ra.history[e].val.f1 == rb.history[e].val.f1;
    }
    for (std::size_t i = 0; i < a.parameters().size(); ++i) same = same && a.parameters()[i].value == b.parameters()[i].value;
  }

  model::Model m(c, 41);
  run(m);
  Rng rng(3);
  const Tensor x = randn({5, 30, 3}, rng);
  const Tensor before = m.predict(x);
  const std::string path = "acceptance_roundtrip.ckpt";
  save_checkpoint(path, make_checkpoint(m));
  model::Model back = restore_model(load_checkpoint(path));
  std::remove(path.c_str());
  const bool persisted = back.predict(x) == before;
  return {same && persisted, fmt("repeat training bitwise %s; restored forward bitwise %s", same ? "equal" : "DIFFERENT",
                                 persisted ? "equal" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"gradient fidelity", 120, gradient_fidelity},
      {"scan oracle equivalence", 10, scan_oracle},
      {"linear complexity", 300, linear_complexity},
      {"token counts", 1, token_counts},
      {"scale-mismatch closed form", 5, scale_mismatch},
      {"noise-suppression bound", 10, noise_bound},
      {"optimal mixer", 30, optimal_mixer_check},
      {"SCI/DIC sanity", 30, sci_dic_sanity},
      {"desk-scale learning", 1200, desk_scale_learning},
      {"reversal equivariance", 5, reversal_equivariance},
      {"metrics oracle", 10, metrics_oracle},
      {"determinism and persistence", 120, determinism_persistence},
  };
  std::vector<std::string> filters(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& c : criteria) {
    if (!filters.empty() && std::none_of(filters.begin(), filters.end(), [&](const std::string& f) {
          return std::string(c.name).find(f) != std::string::npos;
        }))
      continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("%s  %-30s %s [%.1fs / %.0fs budget%s]\n", pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs,
                c.budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
