#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "medmamba/autodiff.hpp"
#include "medmamba/data.hpp"
#include "medmamba/model.hpp"

namespace medmamba::training {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 512;
  double lr_peak = 5e-4;
  double weight_decay = 0.1;
  std::size_t warmup_epochs = 5;
  double warmup_start_frac = 0.01;
  double clip_norm = 4.0;
  double label_smoothing = 0.02;
  std::uint64_t seed = 41;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t eval_batch = 256;

  void validate() const;
};

// Keys: epochs, batch_size, lr_peak, weight_decay, warmup_epochs,
// warmup_start_frac, clip_norm, label_smoothing, seed, betas, adam_eps,
// eval_batch. Missing keys keep their current value.
nlohmann::json to_json(const TrainConfig& cfg);
void merge_json(TrainConfig& cfg, const nlohmann::json& j);

/// Mean over the batch of -sum_k q_k log softmax(logits)_k with
/// q = (1 - eps) onehot(y) + eps / K. logits: [B, K].
Var smoothed_ce(const Var& logits, std::span<const std::size_t> labels, double eps);

struct AdamState {
  std::vector<Tensor> m, v;
  std::uint64_t step = 0;
};

/// One AdamW update over `params` (grads aligned by index). Decoupled decay
/// theta <- theta - lr * wd * theta is applied to parameters flagged for
/// decay before the bias-corrected Adam step. A non-finite gradient aborts
/// before anything is modified, naming the tensor.
void adamw_step(std::vector<model::Parameter>& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
                const TrainConfig& cfg);

/// Linear warmup from warmup_start_frac * lr_peak to lr_peak over the
/// warmup steps, then half-cosine down to 0 at the last step.
double lr_schedule(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg);

// Scales all gradients by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& grads, double max_norm);

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;  // macro
  double recall = 0.0;     // macro
  double f1 = 0.0;         // macro
  std::optional<double> auroc;  // macro one-vs-rest; absent with a single label class

  nlohmann::json to_json() const;
};

/// Predictions are row argmaxes (lowest index on ties). P/R/F1 average over
/// the classes that occur among labels or predictions, with 0/0 read as 0.
/// AUROC ranks softmax probabilities with midranks and averages over the
/// classes present in the labels.
MetricsReport compute_metrics(const Tensor& logits, std::span<const std::size_t> labels);

// Rank-based AUROC with midranks for ties; requires both classes present.
double binary_auroc(std::span<const double> scores, std::span<const std::uint8_t> positive);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;        // rate at the epoch's first step
  double train_loss = 0.0;
  MetricsReport val;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  MetricsReport best_val;
  std::vector<NamedTensor> best_state;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded loop: per epoch a permutation from (seed, epoch), minibatches in
/// train mode, smoothed CE, backward, clipping, AdamW with the scheduled
/// rate, then validation. The state with the highest validation macro-F1
/// (earliest epoch on ties) is restored into `model` on return.
TrainResult train_loop(model::Model& model, const data::WindowSet& train, const data::WindowSet& val,
                       const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Eval-mode logits [N, K] computed in chunks of `batch` windows.
Tensor evaluate(model::Model& model, const data::WindowSet& ws, std::size_t batch = 256);

// Windows at `indices`, stacked into [n, L, C].
Tensor gather(const Tensor& windows, std::span<const std::size_t> indices);

struct DataOptions {
  std::size_t length = 256;
  std::size_t hop = 256;
  std::array<double, 3> split{0.6, 0.2, 0.2};
  bool stratify = true;
};

struct Prepared {
  data::Split split;
  data::WindowSet train, val, test;
  data::NormStats norm;
};

// Subject split, windowing, and z-scoring with training statistics.
Prepared prepare_data(const std::vector<data::Recording>& recordings, const DataOptions& opt, std::uint64_t seed);

struct GradCheckOptions {
  std::size_t batch = 3;
  std::uint64_t seed = 41;
  double perturb = 0.3;  // sd of noise added to every initialized parameter
  double tol = 1e-4;
};

/// Finite-difference check of every parameter of a freshly initialized
/// model under the smoothed cross-entropy loss on random inputs, in train
/// mode with all dropout rates forced to zero.
GradCheckReport model_grad_check(ModelConfig config, const GradCheckOptions& opt);

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);

}  // namespace medmamba::training
