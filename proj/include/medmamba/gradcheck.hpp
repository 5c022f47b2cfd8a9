#pragma once

#include <functional>
#include <string>
#include <vector>

#include "medmamba/autodiff.hpp"

namespace medmamba {

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Builds a scalar loss on `tape` from leaves bound to the given parameters.
using LossFn = std::function<Var(Tape& tape, const std::vector<Var>& params)>;

struct GradCheckEntry {
  std::string name;
  std::size_t size = 0;
  double rel_error = 0.0;      // |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-12), 2-norms
  double max_abs_error = 0.0;
  bool finite = true;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tol_rel = 0.0;
  bool passed = false;

  const GradCheckEntry* worst() const;
  // Names of entries that failed, in parameter order.
  std::vector<std::string> failures() const;
};

/// Compares tape gradients against central differences with step
/// 1e-5 * (|theta| + 1) for every element of every parameter.
GradCheckReport grad_check(const LossFn& loss, const std::vector<NamedTensor>& params, double tol_rel = 1e-4);

}  // namespace medmamba
