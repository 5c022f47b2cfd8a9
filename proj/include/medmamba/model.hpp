#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "medmamba/autodiff.hpp"
#include "medmamba/config.hpp"
#include "medmamba/gradcheck.hpp"
#include "medmamba/rng.hpp"
#include "medmamba/ssm.hpp"

namespace medmamba::model {

// Building blocks. Every op takes batched, time-major activations [B, T, F].

struct ChannelDropout {
  Var x;
  Tensor mask;  // [B, C], 0 or 1, shared across time
};

// Drops whole channels per sample and rescales survivors by 1/(1-p).
ChannelDropout channel_dropout(const Var& x, double p, Mode mode, Rng& rng);

// Elementwise inverted dropout.
Var dropout(const Var& x, double p, Mode mode, Rng& rng);

// Per-sample stochastic depth on a residual branch [B, ...].
Var drop_path(const Var& branch, double p, Mode mode, Rng& rng);

struct MixerVars {
  Var ln_g, ln_b;  // [C]
  Var w1;          // [rho*C, C]
  Var w2;          // [C, rho*C]
};

// x + W2 Dropout(GELU(W1 LN(x))) at every timestep. x: [B, L, C].
Var channel_mix(const Var& x, const MixerVars& p, double p_do, Mode mode, Rng& rng, double ln_eps = 1e-5);

struct StemVars {
  Var conv_w;      // [D, C, s]
  Var bn_g, bn_b;  // [D]
  Var pos;         // [L_m, D]
};

// Patch conv with kernel = stride, BatchNorm, GELU, positional embedding.
// x: [B, L, C] -> [B, L_m, D].
Var embed_scale(const Var& x, const StemVars& p, std::size_t stride, BnState& bn, Mode mode);

struct BlockVars {
  Var ln_g, ln_b;        // [D]
  Var in_w, in_b;        // [2*Di, D], [2*Di]
  Var dwconv;            // [Di, k]
  ssm::SsmVars ssm_fwd;
  ssm::SsmVars ssm_bwd;
  Var ln_inner_g, ln_inner_b;  // [Di]
  Var out_w;             // [D, Di]
};

// Pre-LN bidirectional selective-scan block with SiLU gating. h: [B, L', D].
Var bimamba_block(const Var& h, const BlockVars& p, double p_dp, Mode mode, Rng& rng, double ln_eps = 1e-5);

struct FfnVars {
  Var ln_g, ln_b;        // [D]
  Var w_gate, w_up;      // [D_ffn, D]
  Var w_down;            // [D, D_ffn]
};

// h + DropPath(W_down(SiLU(W_gate LN(h)) * W_up LN(h))).
Var gated_ffn(const Var& h, const FfnVars& p, double p_dp, Mode mode, Rng& rng, double ln_eps = 1e-5);

struct PoolVars {
  Var w1;  // [D/4, D]
  Var w2;  // [D/4]
};

struct Pooled {
  Var r;      // [B, D]
  Var alpha;  // [B, L_m]
};

Pooled attention_pool(const Var& h, const PoolVars& p);

struct HeadVars {
  Var fuse_ln_g, fuse_ln_b;  // [M*D]
  Var fuse_w, fuse_b;        // [D, M*D], [D]
  Var cls_ln_g, cls_ln_b;    // [D]
  Var cls_w, cls_b;          // [K, D], [K]
};

// Concatenate per-scale descriptors, fuse to D, classify to K logits.
Var fuse_and_classify(const std::vector<Var>& descriptors, const HeadVars& p, std::size_t scales,
                      double ln_eps = 1e-5);

// Lowest index among maximal entries of each row of a [B, K] tensor.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

// Name -> Var lookup for one forward pass.
class Bound {
 public:
  void set(const std::string& name, Var v) { vars_[name] = v; }
  const Var& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }

 private:
  std::unordered_map<std::string, Var> vars_;
};

struct Parameter {
  std::string name;
  Tensor value;
  bool decay = false;  // subject to weight decay
};

class Model {
 public:
  // Random initialization, deterministic in `seed`.
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  Tensor& parameter(const std::string& name);
  const Tensor& parameter(const std::string& name) const;
  std::size_t parameter_count() const;

  std::vector<BnState>& batchnorm() noexcept { return bn_; }

  // Parameters followed by BatchNorm buffers, in canonical order.
  std::vector<NamedTensor> state() const;
  // Overwrites every parameter and buffer; each must be present with the
  // same shape. Unrelated names are ignored.
  void load_state(const std::vector<NamedTensor>& tensors);

  Bound bind(Tape& tape, bool requires_grad = true) const;

  // x: [B, L, C] -> logits [B, K]. Train mode updates BatchNorm statistics.
  Var forward(const Bound& params, const Var& x, Mode mode, Rng& rng);
  // Eval-mode logits without gradients.
  Tensor predict(const Tensor& x);

  // Pieces of the forward pass bound from `params`.
  MixerVars mixer(const Bound& params) const;
  StemVars stem(const Bound& params, std::size_t scale) const;
  BlockVars block(const Bound& params, std::size_t scale, std::size_t index) const;
  FfnVars ffn(const Bound& params, std::size_t scale, std::size_t index) const;
  PoolVars pool(const Bound& params, std::size_t scale) const;
  HeadVars head(const Bound& params) const;

 private:
  Tensor& add(const std::string& name, Tensor value, bool decay);
  void initialize(std::uint64_t seed);

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<BnState> bn_;  // one per scale
};

}  // namespace medmamba::model
