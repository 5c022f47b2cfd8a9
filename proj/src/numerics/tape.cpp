#include <algorithm>
#include <cmath>

#include "medmamba/autodiff.hpp"
#include "medmamba/errors.hpp"

namespace medmamba {

const Tensor& Var::value() const { return tape_->value(*this); }

bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::push(const char* op, Tensor value, bool requires_grad, Backward backward) {
  if (check_finite_ && !value.all_finite()) {
    throw NumericError(std::string("non-finite output from ") + op);
  }
  Node& node = nodes_.emplace_back();
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value, bool requires_grad) { return push("leaf", std::move(value), requires_grad, {}); }

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool any = false;
  for (const auto& in : inputs) any = any || requires_grad(in);
  return push(op, std::move(value), any, std::move(backward));
}

Var Tape::record(const char* op, Tensor value, const std::vector<Var>& inputs, Backward backward) {
  bool any = false;
  for (const auto& in : inputs) any = any || requires_grad(in);
  return push(op, std::move(value), any, std::move(backward));
}

Tensor* Tape::grad_sink(const Var& v) {
  Node& node = nodes_[v.id()];
  if (!node.requires_grad) return nullptr;
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape());
    node.has_grad = true;
  }
  return &node.grad;
}

Tensor Tape::grad(const Var& v) const {
  const Node& node = nodes_[v.id()];
  if (node.has_grad) return node.grad;
  return Tensor(node.value.shape());
}

void Tape::backward(const Var& root) {
  Tensor* seed = grad_sink(root);
  if (seed == nullptr) return;
  seed->fill(1.0);
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.has_grad && node.backward) node.backward(*this, node.grad);
  }
}

BnState BnState::init(std::size_t features) {
  BnState state;
  state.running_mean = Tensor({features}, 0.0);
  state.running_var = Tensor({features}, 1.0);
  return state;
}

}  // namespace medmamba
