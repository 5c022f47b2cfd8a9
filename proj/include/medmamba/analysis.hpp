#pragma once

#include <cstddef>
#include <span>

#include "medmamba/tensor.hpp"

namespace medmamba::analysis {

/// Spectral centralization lambda_max(Sigma) / tr(Sigma) of x [S, T], with
/// Sigma the channel covariance normalized by 1/(T-1).
double sci(const Tensor& x);

// Channel covariance [S, S] of x [S, T], time mean removed.
Tensor channel_covariance(const Tensor& x);

struct DicResult {
  double dic = 0.0;
  Tensor influence;   // s_i = sum_j |A_ji|, [S]
  Tensor transition;  // A = Y Z^T, [S, S]
};

/// Dynamic influence centralization (max s - mean s) / mean s, where
/// Z = x[:, 0:T-1] and Y = x[:, 1:T].
DicResult dic(const Tensor& x);

struct CentralizationReport {
  double sci = 0.0;
  double dic = 0.0;
  Tensor influence;
  Tensor transition;
};

CentralizationReport centralization(const Tensor& x);

// min_m |ln tau - ln s_m| for tau in [s_1, s_M].
double scale_mismatch(double tau, std::span<const double> strides);
// Half the largest log gap between consecutive strides.
double worst_case_mismatch(std::span<const double> strides);

struct BoundCheck {
  double lhs = 0.0;      // |Mn| / |Ms|
  double rhs = 0.0;      // gamma / (1 - eps) * |n| / |s|
  double epsilon = 0.0;  // max(0, 1 - |Ms| / |s|)
  double gamma = 0.0;    // |Mn| / |n|
  bool degenerate = false;  // |Ms| == 0
  bool holds = false;       // lhs <= rhs + 1e-12 max(1, rhs)
};

/// Measures epsilon and gamma from the action of M [r, C] on s and n [C]
/// and evaluates both sides of the nuisance-to-signal contraction bound.
BoundCheck noise_suppression_bound(const Tensor& m, const Tensor& s, const Tensor& n);

struct MixerInputs {
  Tensor sigma_s;  // [C, C], symmetric PSD
  Tensor sigma_n;  // [C, C], symmetric PSD
  double sigma2 = 0.0;
  std::size_t rank = 1;
};

/// Gaussian mutual information between M (s + n + xi) and s, xi ~ N(0, sigma2 I):
///   0.5 [log det M(Sigma_s + W)M^T - log det M W M^T],  W = Sigma_n + sigma2 I.
double mixer_mi(const Tensor& m, const MixerInputs& in);

struct OptimalMixer {
  Tensor mixer;        // [r, C], U_r^T W^{-1/2}
  double mi = 0.0;     // 0.5 sum_{i<r} ln(1 + lambda_i(K))
  Tensor eigenvalues;  // of K, descending
};

/// Top-r generalized eigendirections of K = W^{-1/2} Sigma_s W^{-1/2}.
OptimalMixer optimal_mixer(const MixerInputs& in);

// W^{-1/2} for symmetric positive definite W; eigenvalues below 1e-12 are
// clamped before inversion.
Tensor inverse_sqrt_pd(const Tensor& w);

// max |M W M^T - I_r|.
double whitening_residual(const Tensor& m, const MixerInputs& in);

// Eigenvalues of a symmetric matrix, descending.
Tensor symmetric_eigenvalues(const Tensor& a);

}  // namespace medmamba::analysis
