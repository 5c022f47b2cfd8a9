#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>

#include "medmamba/tensor.hpp"

namespace medmamba {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record. Nodes are appended in evaluation order, so walking
/// ids backwards visits every node after all of its consumers.
class Tape {
 public:
  // Receives the accumulated gradient of the node's output.
  using Backward = std::function<void(Tape&, const Tensor&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op result. The backward closure is kept only when some
  // input requires a gradient.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(const char* op, Tensor value, const std::vector<Var>& inputs, Backward backward);

  const Tensor& value(const Var& v) const { return nodes_[v.id()].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  // Gradient accumulator of `v`, zero-initialized on first use; nullptr
  // when `v` does not participate in differentiation.
  Tensor* grad_sink(const Var& v);

  // Accumulated gradient; zeros if `v` received none.
  Tensor grad(const Var& v) const;

  // Seeds d(root)/d(root) = 1 elementwise and replays the tape.
  void backward(const Var& root);

  std::size_t size() const noexcept { return nodes_.size(); }

  // When enabled, any op producing a non-finite value throws NumericError.
  void set_check_finite(bool enabled) noexcept { check_finite_ = enabled; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };

  Var push(const char* op, Tensor value, bool requires_grad, Backward backward);

  std::deque<Node> nodes_;
  bool check_finite_ = false;
};

enum class Padding { none, symmetric_zero };

enum class Mode { train, eval };

/// Running statistics of a BatchNorm1d layer.
struct BnState {
  Tensor running_mean;
  Tensor running_var;
  std::uint64_t updates = 0;
  double momentum = 0.1;
  double eps = 1e-5;

  static BnState init(std::size_t features);
};

namespace ad {

Var matmul(const Var& a, const Var& b);
// Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n].
Var bmm(const Var& a, const Var& b);
// x[..., in] * w[out, in]^T (+ bias[out]).
Var linear(const Var& x, const Var& w);
Var linear(const Var& x, const Var& w, const Var& bias);
// x: [C_in, L] or [B, C_in, L]; w: [C_out, C_in, k].
Var conv1d(const Var& x, const Var& w, std::size_t stride, Padding padding);
// x: [B, L, D]; w: [D, k] with k odd; centered, zero padded.
Var depthwise_conv1d(const Var& x, const Var& w);

Var gelu(const Var& x);
Var silu(const Var& x);
Var softplus(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var neg(const Var& x);
Var scale(const Var& x, double factor);

// Binary ops broadcast numpy-style.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

// x: [B, D, L], normalized per feature over batch and time. Train mode
// uses population variance and updates `state` (unbiased running var).
Var batchnorm1d(const Var& x, const Var& gamma, const Var& beta, BnState& state, Mode mode);

Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax(const Var& x, std::size_t axis);
Var log_softmax(const Var& x);  // last axis

Var sum(const Var& x);
Var mean(const Var& x);

Var reshape(const Var& x, Shape shape);
Var transpose(const Var& x, std::size_t axis0, std::size_t axis1);
// x[..., start:start+len] along the last axis.
Var slice_last(const Var& x, std::size_t start, std::size_t len);
Var concat_last(const std::vector<Var>& parts);
Var flip(const Var& x, std::size_t axis);

}  // namespace ad

inline Var operator+(const Var& a, const Var& b) { return ad::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ad::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ad::mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return ad::div(a, b); }

// Scalar definitions shared by ops, kernels and tests.
namespace scalar {
double gelu(double x);
double gelu_grad(double x);
double silu(double x);
double silu_grad(double x);
double softplus(double x);
double sigmoid(double x);
}  // namespace scalar

}  // namespace medmamba
