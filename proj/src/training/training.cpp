#include "medmamba/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "medmamba/errors.hpp"
#include "medmamba/rng.hpp"

namespace medmamba::training {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0 || eval_batch == 0) throw ConfigError("batch sizes must be >= 1");
  if (!(lr_peak >= 0.0)) throw ConfigError("lr_peak must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(warmup_start_frac >= 0.0 && warmup_start_frac <= 1.0)) throw ConfigError("warmup_start_frac must lie in [0, 1]");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr_peak", c.lr_peak},
          {"weight_decay", c.weight_decay},
          {"warmup_epochs", c.warmup_epochs},
          {"warmup_start_frac", c.warmup_start_frac},
          {"clip_norm", c.clip_norm},
          {"label_smoothing", c.label_smoothing},
          {"seed", c.seed},
          {"betas", {c.beta1, c.beta2}},
          {"adam_eps", c.adam_eps},
          {"eval_batch", c.eval_batch}};
}

void merge_json(TrainConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  auto count = [&](const std::string& key, auto& field) {
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.template get<long long>() < 0) {
      throw ConfigError("'" + key + "' must be a non-negative integer");
    }
    field = v.template get<std::remove_reference_t<decltype(field)>>();
  };
  auto real = [&](const std::string& key, double& field) {
    if (!j.at(key).is_number()) throw ConfigError("'" + key + "' must be a number");
    field = j.at(key).get<double>();
  };
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") count(key, c.epochs);
    else if (key == "batch_size") count(key, c.batch_size);
    else if (key == "warmup_epochs") count(key, c.warmup_epochs);
    else if (key == "seed") count(key, c.seed);
    else if (key == "eval_batch") count(key, c.eval_batch);
    else if (key == "lr_peak") real(key, c.lr_peak);
    else if (key == "weight_decay") real(key, c.weight_decay);
    else if (key == "warmup_start_frac") real(key, c.warmup_start_frac);
    else if (key == "clip_norm") real(key, c.clip_norm);
    else if (key == "label_smoothing") real(key, c.label_smoothing);
    else if (key == "adam_eps") real(key, c.adam_eps);
    else if (key == "betas") {
      if (!value.is_array() || value.size() != 2 || !value[0].is_number() || !value[1].is_number()) {
        throw ConfigError("'betas' must be a pair of numbers");
      }
      c.beta1 = value[0].get<double>();
      c.beta2 = value[1].get<double>();
    } else {
      throw ConfigError("unknown training key '" + key + "'");
    }
  }
}

Var smoothed_ce(const Var& logits, std::span<const std::size_t> labels, double eps) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw DimensionError("smoothed_ce expects [B, K] logits, got " + to_string(s));
  const std::size_t b = s[0], k = s[1];
  if (labels.size() != b) throw DimensionError("smoothed_ce: label count does not match batch");
  if (!(eps >= 0.0 && eps < 1.0)) throw DomainError("smoothed_ce: eps must lie in [0, 1)");
  Tensor q({b, k}, eps / static_cast<double>(k));
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= k) {
      throw IndexError("smoothed_ce: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(k) + ")");
    }
    q[i * k + labels[i]] += 1.0 - eps;
  }
  Tape& tape = logits.tape();
  const Var weighted = ad::mul(tape.constant(std::move(q)), ad::log_softmax(logits));
  return ad::scale(ad::sum(weighted), -1.0 / static_cast<double>(b));
}

void adamw_step(std::vector<model::Parameter>& params, const std::vector<Tensor>& grads, AdamState& st, double lr,
                const TrainConfig& cfg) {
  if (grads.size() != params.size()) throw DimensionError("adamw_step: gradient count does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape()) {
      throw DimensionError("adamw_step: gradient shape mismatch for " + params[i].name);
    }
    if (!grads[i].all_finite()) throw NumericError("adamw_step: non-finite gradient in " + params[i].name);
  }
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.value.shape());
      st.v.emplace_back(p.value.shape());
    }
  }
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* w = params[i].value.data();
    double* m = st.m[i].data();
    double* v = st.v[i].data();
    const double* g = grads[i].data();
    const double shrink = params[i].decay ? lr * cfg.weight_decay : 0.0;
    for (std::size_t e = 0; e < params[i].value.size(); ++e) {
      w[e] -= shrink * w[e];
      m[e] = cfg.beta1 * m[e] + (1.0 - cfg.beta1) * g[e];
      v[e] = cfg.beta2 * v[e] + (1.0 - cfg.beta2) * g[e] * g[e];
      w[e] -= lr * (m[e] / bc1) / (std::sqrt(v[e] / bc2) + cfg.adam_eps);
    }
  }
}

double lr_schedule(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg) {
  const std::size_t total = cfg.epochs * steps_per_epoch;
  const std::size_t warm = std::min(cfg.warmup_epochs * steps_per_epoch, total);
  if (step < warm) {
    const double frac = static_cast<double>(step) / static_cast<double>(warm);
    return cfg.lr_peak * (cfg.warmup_start_frac + (1.0 - cfg.warmup_start_frac) * frac);
  }
  if (step + 1 >= total) return 0.0;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total - 1 - warm);
  return cfg.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw DomainError("clip_grad_norm: max_norm must be > 0");
  double ss = 0.0;
  for (const auto& g : grads)
    for (double x : g.values()) ss += x * x;
  const double norm = std::sqrt(ss);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& g : grads)
      for (double& x : g.values()) x *= f;
  }
  return norm;
}

json MetricsReport::to_json() const {
  json j = {{"accuracy", accuracy}, {"precision", precision}, {"recall", recall}, {"f1", f1}};
  if (auroc) j["auroc"] = *auroc;
  return j;
}

double binary_auroc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  const std::size_t n = scores.size();
  if (positive.size() != n) throw DimensionError("binary_auroc: size mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        pos_rank += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DomainError("binary_auroc needs both classes");
  const double np = static_cast<double>(n_pos);
  return (pos_rank - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

MetricsReport compute_metrics(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw DimensionError("compute_metrics expects [N, K] logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (n == 0) throw DomainError("compute_metrics needs at least one example");
  if (labels.size() != n) throw DimensionError("compute_metrics: label count does not match logits");
  for (std::size_t y : labels) {
    if (y >= k) throw IndexError("compute_metrics: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
  }
  const auto pred = model::argmax_rows(logits);
  std::vector<std::size_t> tp(k, 0), n_pred(k, 0), n_true(k, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ++n_pred[pred[i]];
    ++n_true[labels[i]];
    if (pred[i] == labels[i]) {
      ++tp[pred[i]];
      ++correct;
    }
  }
  MetricsReport r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  std::size_t used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (n_pred[c] == 0 && n_true[c] == 0) continue;
    ++used;
    const double p = n_pred[c] ? static_cast<double>(tp[c]) / static_cast<double>(n_pred[c]) : 0.0;
    const double rc = n_true[c] ? static_cast<double>(tp[c]) / static_cast<double>(n_true[c]) : 0.0;
    r.precision += p;
    r.recall += rc;
    r.f1 += p + rc > 0.0 ? 2.0 * p * rc / (p + rc) : 0.0;
  }
  r.precision /= static_cast<double>(used);
  r.recall /= static_cast<double>(used);
  r.f1 /= static_cast<double>(used);

  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) present += n_true[c] > 0;
  if (present >= 2) {
    // Row softmax, max-shifted. The normalizer is summed in sorted order so
    // rows that are permutations of each other give bitwise-equal scores
    // and tie in the ranking.
    Tensor prob({n, k});
    std::vector<double> ex(k);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = logits.data() + i * k;
      const double mx = *std::max_element(row, row + k);
      for (std::size_t c = 0; c < k; ++c) ex[c] = std::exp(row[c] - mx);
      std::vector<double> sorted = ex;
      std::sort(sorted.begin(), sorted.end());
      const double z = std::accumulate(sorted.begin(), sorted.end(), 0.0);
      for (std::size_t c = 0; c < k; ++c) prob[i * k + c] = ex[c] / z;
    }
    double sum = 0.0;
    std::vector<double> scores(n);
    std::vector<std::uint8_t> pos(n);
    for (std::size_t c = 0; c < k; ++c) {
      if (n_true[c] == 0) continue;
      for (std::size_t i = 0; i < n; ++i) {
        scores[i] = prob[i * k + c];
        pos[i] = labels[i] == c;
      }
      sum += binary_auroc(scores, pos);
    }
    r.auroc = sum / static_cast<double>(present);
  }
  return r;
}

Tensor gather(const Tensor& windows, std::span<const std::size_t> indices) {
  if (windows.rank() != 3) throw DimensionError("gather expects [N, L, C] windows");
  const std::size_t per = windows.dim(1) * windows.dim(2);
  std::vector<double> out;
  out.reserve(indices.size() * per);
  for (std::size_t i : indices) {
    if (i >= windows.dim(0)) throw IndexError("gather: window index out of range");
    const double* src = windows.data() + i * per;
    out.insert(out.end(), src, src + per);
  }
  return Tensor({indices.size(), windows.dim(1), windows.dim(2)}, std::move(out));
}

Tensor evaluate(model::Model& model, const data::WindowSet& ws, std::size_t batch) {
  const std::size_t n = ws.size(), k = model.config().classes;
  Tensor out({n, k});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = model.predict(gather(ws.windows, idx));
    std::copy(logits.values().begin(), logits.values().end(), out.data() + start * k);
  }
  return out;
}

TrainResult train_loop(model::Model& model, const data::WindowSet& train, const data::WindowSet& val,
                       const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.size() == 0 || val.size() == 0) throw DataError("train_loop needs non-empty train and validation sets");
  const std::size_t n = train.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const Rng root(cfg.seed);
  AdamState adam;
  TrainResult result;
  std::size_t step = 0;
  auto& params = model.parameters();
  std::vector<std::size_t> batch_labels;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_schedule(step, steps_per_epoch, cfg);
    Rng shuffle = root.fork("shuffle").fork(epoch);
    const auto order = shuffle.permutation(n);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b, ++step) {
      const std::size_t start = b * cfg.batch_size, end = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      batch_labels.clear();
      for (std::size_t i : idx) batch_labels.push_back(train.labels[i]);

      Tape tape;
      Rng noise = root.fork("dropout").fork(epoch).fork(b);
      const model::Bound bound = model.bind(tape, true);
      const Var logits = model.forward(bound, tape.constant(gather(train.windows, idx)), Mode::train, noise);
      const Var loss = smoothed_ce(logits, batch_labels, cfg.label_smoothing);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1));
      }
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (const auto& p : params) grads.push_back(tape.grad(bound[p.name]));
      clip_grad_norm(grads, cfg.clip_norm);
      adamw_step(params, grads, adam, lr_schedule(step, steps_per_epoch, cfg), cfg);
      loss_sum += value * static_cast<double>(idx.size());
    }
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.val = compute_metrics(evaluate(model, val, cfg.eval_batch), val.labels);
    if (result.best_state.empty() || rec.val.f1 > result.best_val.f1) {
      result.best_epoch = epoch;
      result.best_val = rec.val;
      result.best_state = model.state();
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  model.load_state(result.best_state);
  return result;
}

Prepared prepare_data(const std::vector<data::Recording>& recordings, const DataOptions& opt, std::uint64_t seed) {
  Prepared p;
  p.split = data::subject_split(recordings, opt.split, seed, opt.stratify);
  p.train = data::make_windows(recordings, opt.length, opt.hop, p.split.train);
  p.val = data::make_windows(recordings, opt.length, opt.hop, p.split.val);
  p.test = data::make_windows(recordings, opt.length, opt.hop, p.split.test);
  if (p.train.size() == 0) throw DataError("no training windows of length " + std::to_string(opt.length));
  p.norm = data::zscore(p.train, {&p.val, &p.test});
  return p;
}

GradCheckReport model_grad_check(ModelConfig config, const GradCheckOptions& opt) {
  config.p_do = config.p_dp = config.p_ch = 0.0;
  model::Model m(config, opt.seed);
  Rng rng = Rng(opt.seed).fork("gradcheck");
  std::vector<NamedTensor> params;
  for (auto& p : m.parameters()) {
    for (double& v : p.value.values()) v += opt.perturb * rng.normal();
    params.push_back({p.name, p.value});
  }
  Tensor x({opt.batch, config.length, config.channels});
  for (double& v : x.values()) v = rng.normal();
  std::vector<std::size_t> labels(opt.batch);
  for (auto& y : labels) y = rng.below(config.classes);
  auto loss = [&](Tape& tape, const std::vector<Var>& vars) {
    model::Bound b;
    for (std::size_t i = 0; i < params.size(); ++i) b.set(params[i].name, vars[i]);
    Rng unused(0);
    return smoothed_ce(m.forward(b, tape.constant(x), Mode::train, unused), labels, 0.02);
  };
  return grad_check(loss, params, opt.tol);
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  out << "epoch,lr,train_loss,val_acc,val_precision,val_recall,val_f1,val_auroc\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.val.accuracy << ',' << r.val.precision << ','
        << r.val.recall << ',' << r.val.f1 << ',';
    if (r.val.auroc) out << *r.val.auroc;
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace medmamba::training
