#include "medmamba/model.hpp"

#include <cmath>

#include "medmamba/errors.hpp"

namespace medmamba::model {

namespace {

void check_probability(double p, const char* what) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError(std::string(what) + ": probability must be in [0, 1), got " + std::to_string(p));
}

// Bernoulli(1-p) keep mask scaled by 1/(1-p).
Tensor keep_mask(Shape shape, double p, Rng& rng) {
  Tensor m(std::move(shape));
  const double scale = 1.0 / (1.0 - p);
  for (double& v : m.values()) v = rng.bernoulli(p) ? 0.0 : scale;
  return m;
}

}  // namespace

ChannelDropout channel_dropout(const Var& x, double p, Mode mode, Rng& rng) {
  check_probability(p, "channel_dropout");
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("channel_dropout: expected [B, L, C], got " + to_string(s));
  const std::size_t B = s[0], C = s[2];
  if (mode == Mode::eval || p == 0.0) return {x, Tensor({B, C}, 1.0)};
  Tensor scaled = keep_mask({B, 1, C}, p, rng);
  Tensor mask({B, C});
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = scaled[i] > 0.0 ? 1.0 : 0.0;
  return {ad::mul(x, x.tape().constant(std::move(scaled))), std::move(mask)};
}

Var dropout(const Var& x, double p, Mode mode, Rng& rng) {
  check_probability(p, "dropout");
  if (mode == Mode::eval || p == 0.0) return x;
  return ad::mul(x, x.tape().constant(keep_mask(x.shape(), p, rng)));
}

Var drop_path(const Var& branch, double p, Mode mode, Rng& rng) {
  check_probability(p, "drop_path");
  if (mode == Mode::eval || p == 0.0) return branch;
  Shape ms(branch.shape().size(), 1);
  ms[0] = branch.shape()[0];
  return ad::mul(branch, branch.tape().constant(keep_mask(ms, p, rng)));
}

Var channel_mix(const Var& x, const MixerVars& p, double p_do, Mode mode, Rng& rng, double ln_eps) {
  Var h = ad::gelu(ad::linear(ad::layernorm(x, p.ln_g, p.ln_b, ln_eps), p.w1));
  h = dropout(h, p_do, mode, rng);
  return x + ad::linear(h, p.w2);
}

Var embed_scale(const Var& x, const StemVars& p, std::size_t stride, BnState& bn, Mode mode) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("embed_scale: expected [B, L, C], got " + to_string(s));
  if (s[1] < stride) {
    throw DimensionError("embed_scale: input length " + std::to_string(s[1]) + " is shorter than the stride-" +
                         std::to_string(stride) + " scale");
  }
  Var conv = ad::conv1d(ad::transpose(x, 1, 2), p.conv_w, stride, Padding::none);  // [B, D, L_m]
  Var tokens = ad::gelu(ad::transpose(ad::batchnorm1d(conv, p.bn_g, p.bn_b, bn, mode), 1, 2));
  const Shape want{tokens.shape()[1], tokens.shape()[2]};
  if (p.pos.shape() != want) {
    throw DimensionError("embed_scale: positional embedding " + to_string(p.pos.shape()) + " vs tokens " +
                         to_string(want));
  }
  return tokens + p.pos;
}

Var bimamba_block(const Var& h, const BlockVars& p, double p_dp, Mode mode, Rng& rng, double ln_eps) {
  Var proj = ad::linear(ad::layernorm(h, p.ln_g, p.ln_b, ln_eps), p.in_w, p.in_b);
  const std::size_t di = proj.shape().back() / 2;
  Var x_ssm = ad::silu(ad::depthwise_conv1d(ad::slice_last(proj, 0, di), p.dwconv));
  Var gate = ad::silu(ad::slice_last(proj, di, di));
  Var y = ssm::bidirectional_scan(x_ssm, p.ssm_fwd, p.ssm_bwd);
  Var out = ad::linear(ad::layernorm(y, p.ln_inner_g, p.ln_inner_b, ln_eps) * gate, p.out_w);
  return h + drop_path(out, p_dp, mode, rng);
}

Var gated_ffn(const Var& h, const FfnVars& p, double p_dp, Mode mode, Rng& rng, double ln_eps) {
  Var n = ad::layernorm(h, p.ln_g, p.ln_b, ln_eps);
  Var f = ad::linear(ad::silu(ad::linear(n, p.w_gate)) * ad::linear(n, p.w_up), p.w_down);
  return h + drop_path(f, p_dp, mode, rng);
}

Pooled attention_pool(const Var& h, const PoolVars& p) {
  const Shape& s = h.shape();
  if (s.size() != 3 || s[1] == 0) throw DimensionError("attention_pool: expected [B, L_m >= 1, D], got " + to_string(s));
  const std::size_t B = s[0], T = s[1], D = s[2];
  const std::size_t hidden = p.w2.shape().at(0);
  Var scores = ad::linear(ad::tanh(ad::linear(h, p.w1)), ad::reshape(p.w2, {1, hidden}));  // [B, T, 1]
  Var alpha = ad::softmax(ad::reshape(scores, {B, T}), 1);
  Var r = ad::reshape(ad::bmm(ad::reshape(alpha, {B, 1, T}), h), {B, D});
  return {r, alpha};
}

Var fuse_and_classify(const std::vector<Var>& descriptors, const HeadVars& p, std::size_t scales, double ln_eps) {
  if (descriptors.size() != scales) {
    throw DimensionError("fuse_and_classify: expected " + std::to_string(scales) + " scale descriptors, got " +
                         std::to_string(descriptors.size()));
  }
  Var cat = descriptors.size() == 1 ? descriptors[0] : ad::concat_last(descriptors);
  Var z = ad::gelu(ad::linear(ad::layernorm(cat, p.fuse_ln_g, p.fuse_ln_b, ln_eps), p.fuse_w, p.fuse_b));
  return ad::linear(ad::layernorm(z, p.cls_ln_g, p.cls_ln_b, ln_eps), p.cls_w, p.cls_b);
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows: expected [B, K], got " + to_string(logits.shape()));
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  std::vector<std::size_t> out(B, 0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 1; k < K; ++k)
      if (logits[b * K + k] > logits[b * K + out[b]]) out[b] = k;
  return out;
}

const Var& Bound::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("no bound parameter named '" + name + "'");
  return it->second;
}

// ---------------------------------------------------------------------------

namespace {

std::string stem_name(std::size_t m) { return "stem" + std::to_string(m); }
std::string block_name(std::size_t m, std::size_t i) {
  return "block" + std::to_string(m) + "." + std::to_string(i);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Tensor truncated(Shape shape, Rng& rng, double sd = 0.02) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.truncated_normal(sd);
  return t;
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  initialize(seed);
}

Tensor& Model::add(const std::string& name, Tensor value, bool decay) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_[name] = params_.size();
  params_.push_back({name, std::move(value), decay});
  return params_.back().value;
}

void Model::initialize(std::uint64_t seed) {
  const Rng root = Rng(seed).fork("init");
  const auto& c = config_;
  const std::size_t C = c.channels, D = c.d_model, Di = c.d_inner(), Df = c.d_ffn();
  auto rng_for = [&](const std::string& name) { return root.fork(name); };
  auto weight = [&](const std::string& name, Shape shape) {
    Rng r = rng_for(name);
    add(name, truncated(std::move(shape), r), true);
  };
  auto norm = [&](const std::string& prefix, std::size_t n) {
    add(prefix + ".g", Tensor({n}, 1.0), false);
    add(prefix + ".b", Tensor({n}, 0.0), false);
  };

  norm("mixer.ln", C);
  weight("mixer.w1", {c.rho * C, C});
  weight("mixer.w2", {C, c.rho * C});

  for (std::size_t m = 0; m < c.scales(); ++m) {
    const std::string st = stem_name(m);
    weight(st + ".conv.w", {D, C, c.strides[m]});
    norm(st + ".bn", D);
    Rng pr = rng_for(st + ".pos");
    Tensor pos({c.tokens(m), D});
    for (double& v : pos.values()) v = pr.normal(0.0, 0.02);
    add(st + ".pos", std::move(pos), false);
    bn_.push_back(BnState::init(D));

    for (std::size_t i = 0; i < c.n_layer; ++i) {
      const std::string bl = block_name(m, i);
      norm(bl + ".ln", D);
      weight(bl + ".in_proj.w", {2 * Di, D});
      add(bl + ".in_proj.b", Tensor({2 * Di}), false);
      weight(bl + ".dwconv.w", {Di, c.conv_kernel});
      for (const char* dir : {"ssm_fwd", "ssm_bwd"}) {
        const std::string pre = bl + "." + dir;
        Rng sr = rng_for(pre);
        ssm::SsmParams sp = ssm::s4d_init(Di, c.d_state, sr);
        if (!(c.shared_a && std::string(dir) == "ssm_bwd")) add(pre + ".A_log", std::move(sp.a_log), false);
        add(pre + ".W_delta", std::move(sp.w_delta), true);
        add(pre + ".b_delta", std::move(sp.b_delta), false);
        add(pre + ".W_B", std::move(sp.w_b), true);
        add(pre + ".W_C", std::move(sp.w_c), true);
        add(pre + ".D", std::move(sp.d_skip), false);
      }
      norm(bl + ".ln_inner", Di);
      weight(bl + ".out_proj.w", {D, Di});
      norm(bl + ".ffn.ln", D);
      weight(bl + ".ffn.w_gate", {Df, D});
      weight(bl + ".ffn.w_up", {Df, D});
      weight(bl + ".ffn.w_down", {D, Df});
    }
    weight("pool" + std::to_string(m) + ".w1", {D / 4, D});
    Rng wr = rng_for("pool" + std::to_string(m) + ".w2");
    add("pool" + std::to_string(m) + ".w2", truncated({D / 4}, wr), false);
  }

  norm("fuse.ln", c.scales() * D);
  weight("fuse.w", {D, c.scales() * D});
  add("fuse.b", Tensor({D}), false);
  norm("cls.ln", D);
  weight("cls.w", {c.classes, D});
  add("cls.b", Tensor({c.classes}), false);

  for (auto& p : params_) {
    if (ends_with(p.name, ".A_log") || ends_with(p.name, ".pos")) p.decay = false;
  }
}

Tensor& Model::parameter(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
  return params_[it->second].value;
}

const Tensor& Model::parameter(const std::string& name) const {
  return const_cast<Model*>(this)->parameter(name);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<NamedTensor> Model::state() const {
  std::vector<NamedTensor> out;
  out.reserve(params_.size() + 3 * bn_.size());
  for (const auto& p : params_) out.push_back({p.name, p.value});
  for (std::size_t m = 0; m < bn_.size(); ++m) {
    const std::string st = stem_name(m) + ".bn.";
    out.push_back({st + "running_mean", bn_[m].running_mean});
    out.push_back({st + "running_var", bn_[m].running_var});
    out.push_back({st + "updates", Tensor({1}, static_cast<double>(bn_[m].updates))});
  }
  return out;
}

void Model::load_state(const std::vector<NamedTensor>& tensors) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.value;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("state is missing tensor '" + name + "'");
    if (it->second->shape() != shape) {
      throw DimensionError("tensor '" + name + "' has shape " + to_string(it->second->shape()) + ", expected " +
                           to_string(shape));
    }
    return *it->second;
  };
  for (auto& p : params_) p.value = fetch(p.name, p.value.shape());
  for (std::size_t m = 0; m < bn_.size(); ++m) {
    const std::string st = stem_name(m) + ".bn.";
    const std::size_t D = config_.d_model;
    bn_[m].running_mean = fetch(st + "running_mean", {D});
    bn_[m].running_var = fetch(st + "running_var", {D});
    const double updates = fetch(st + "updates", {1})[0];
    if (!(updates >= 0.0) || updates != std::floor(updates)) throw ConfigError(st + "updates must be a count");
    bn_[m].updates = static_cast<std::uint64_t>(updates);
  }
}

Bound Model::bind(Tape& tape, bool requires_grad) const {
  Bound b;
  for (const auto& p : params_) b.set(p.name, tape.leaf(p.value, requires_grad));
  return b;
}

MixerVars Model::mixer(const Bound& p) const {
  return {p["mixer.ln.g"], p["mixer.ln.b"], p["mixer.w1"], p["mixer.w2"]};
}

StemVars Model::stem(const Bound& p, std::size_t m) const {
  const std::string st = stem_name(m);
  return {p[st + ".conv.w"], p[st + ".bn.g"], p[st + ".bn.b"], p[st + ".pos"]};
}

BlockVars Model::block(const Bound& p, std::size_t m, std::size_t i) const {
  const std::string bl = block_name(m, i);
  auto direction = [&](const std::string& dir, const std::string& a_from) {
    const std::string pre = bl + "." + dir;
    return ssm::SsmVars{p[bl + "." + a_from + ".A_log"], p[pre + ".W_delta"], p[pre + ".b_delta"],
                        p[pre + ".W_B"],                 p[pre + ".W_C"],     p[pre + ".D"]};
  };
  return {p[bl + ".ln.g"],
          p[bl + ".ln.b"],
          p[bl + ".in_proj.w"],
          p[bl + ".in_proj.b"],
          p[bl + ".dwconv.w"],
          direction("ssm_fwd", "ssm_fwd"),
          direction("ssm_bwd", config_.shared_a ? "ssm_fwd" : "ssm_bwd"),
          p[bl + ".ln_inner.g"],
          p[bl + ".ln_inner.b"],
          p[bl + ".out_proj.w"]};
}

FfnVars Model::ffn(const Bound& p, std::size_t m, std::size_t i) const {
  const std::string f = block_name(m, i) + ".ffn";
  return {p[f + ".ln.g"], p[f + ".ln.b"], p[f + ".w_gate"], p[f + ".w_up"], p[f + ".w_down"]};
}

PoolVars Model::pool(const Bound& p, std::size_t m) const {
  const std::string pl = "pool" + std::to_string(m);
  return {p[pl + ".w1"], p[pl + ".w2"]};
}

HeadVars Model::head(const Bound& p) const {
  return {p["fuse.ln.g"], p["fuse.ln.b"], p["fuse.w"], p["fuse.b"],
          p["cls.ln.g"],  p["cls.ln.b"],  p["cls.w"],  p["cls.b"]};
}

Var Model::forward(const Bound& params, const Var& x, Mode mode, Rng& rng) {
  const auto& c = config_;
  const Shape& s = x.shape();
  if (s.size() != 3 || s[1] != c.length || s[2] != c.channels) {
    throw DimensionError("forward: expected [B, " + std::to_string(c.length) + ", " + std::to_string(c.channels) +
                         "], got " + to_string(s));
  }
  if (!x.value().all_finite()) throw NumericError("forward: input contains non-finite values");

  Var h = channel_dropout(x, c.p_ch, mode, rng).x;
  h = channel_mix(h, mixer(params), c.p_do, mode, rng, c.ln_eps);
  std::vector<Var> descriptors;
  for (std::size_t m = 0; m < c.scales(); ++m) {
    Var t = embed_scale(h, stem(params, m), c.strides[m], bn_[m], mode);
    for (std::size_t i = 0; i < c.n_layer; ++i) {
      t = bimamba_block(t, block(params, m, i), c.p_dp, mode, rng, c.ln_eps);
      t = gated_ffn(t, ffn(params, m, i), c.p_dp, mode, rng, c.ln_eps);
    }
    descriptors.push_back(dropout(attention_pool(t, pool(params, m)).r, c.p_do, mode, rng));
  }
  return fuse_and_classify(descriptors, head(params), c.scales(), c.ln_eps);
}

Tensor Model::predict(const Tensor& x) {
  Tape tape;
  Rng unused(0);
  return forward(bind(tape, false), tape.constant(x), Mode::eval, unused).value();
}

}  // namespace medmamba::model
