#include "medmamba/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "medmamba/errors.hpp"

namespace medmamba::analysis {

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("expected a matrix, got " + to_string(t.shape()));
  return Eigen::Map<const Matrix>(t.data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

Tensor to_tensor(const Matrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<Matrix>(t.data(), m.rows(), m.cols()) = m;
  return t;
}

Eigen::VectorXd to_vector(const Tensor& t, const char* what) {
  if (t.rank() != 1) throw DimensionError(std::string(what) + ": expected a vector, got " + to_string(t.shape()));
  return Eigen::Map<const Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
}

// Mean of values that may all be equal; exact in that case.
double stable_mean(const Eigen::VectorXd& v) {
  const double base = v(0);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) acc += v(i) - base;
  return base + acc / static_cast<double>(v.size());
}

void check_symmetric(const Matrix& a, const char* what) {
  if (a.rows() != a.cols()) throw DimensionError(std::string(what) + " must be square");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw DomainError(std::string(what) + " is not symmetric");
  }
}

Matrix noise_matrix(const MixerInputs& in) {
  Matrix sn = to_matrix(in.sigma_n);
  check_symmetric(sn, "Sigma_n");
  if (in.sigma2 < 0.0) throw DomainError("sigma2 must be >= 0");
  sn.diagonal().array() += in.sigma2;
  return sn;
}

double log_det_pd(const Matrix& a, const char* what) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw NumericError(std::string(what) + " is not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

}  // namespace

Tensor channel_covariance(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("covariance: expected [S, T], got " + to_string(x.shape()));
  const std::size_t T = x.dim(1);
  if (T < 2) throw DomainError("covariance: need T >= 2 samples");
  Matrix xc = to_matrix(x);
  xc.colwise() -= xc.rowwise().mean();
  Matrix cov = xc * xc.transpose() / static_cast<double>(T - 1);
  return to_tensor(0.5 * (cov + cov.transpose()));
}

Tensor symmetric_eigenvalues(const Tensor& a) {
  const Matrix m = to_matrix(a);
  check_symmetric(m, "matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("symmetric eigensolver did not converge");
  const Eigen::VectorXd ev = es.eigenvalues().reverse();
  return Tensor({static_cast<std::size_t>(ev.size())}, std::vector<double>(ev.data(), ev.data() + ev.size()));
}

double sci(const Tensor& x) {
  const Tensor cov = channel_covariance(x);
  const std::size_t S = cov.dim(0);
  double trace = 0.0;
  for (std::size_t i = 0; i < S; ++i) trace += cov[i * S + i];
  if (!(trace > 0.0)) throw DomainError("SCI undefined: every channel is constant (tr Sigma = 0)");
  // tr(Sigma) = sum of eigenvalues; those under the numerical-rank tolerance
  // max(S, T) * eps * lambda_max are round-off around zero and are dropped.
  const Tensor ev = symmetric_eigenvalues(cov);
  const double lambda_max = ev[0];
  const double tol =
      static_cast<double>(std::max(S, x.dim(1))) * std::numeric_limits<double>::epsilon() * lambda_max;
  double spectrum = lambda_max;
  for (std::size_t i = 1; i < S; ++i)
    if (ev[i] > tol) spectrum += ev[i];
  return std::clamp(lambda_max / spectrum, 1.0 / static_cast<double>(S), 1.0);
}

DicResult dic(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("DIC: expected [S, T], got " + to_string(x.shape()));
  const auto T = static_cast<Eigen::Index>(x.dim(1));
  if (T < 3) throw DomainError("DIC: need T >= 3 samples");
  const Matrix xm = to_matrix(x);
  const Matrix a = xm.rightCols(T - 1) * xm.leftCols(T - 1).transpose();
  const Eigen::VectorXd s = a.cwiseAbs().colwise().sum().transpose();
  const double mean = stable_mean(s);
  if (!(mean > 0.0)) throw DomainError("DIC undefined: mean influence is zero");
  DicResult r;
  r.dic = (s.maxCoeff() - mean) / mean;
  r.influence = Tensor({static_cast<std::size_t>(s.size())}, std::vector<double>(s.data(), s.data() + s.size()));
  r.transition = to_tensor(a);
  return r;
}

CentralizationReport centralization(const Tensor& x) {
  DicResult d = dic(x);
  return {sci(x), d.dic, std::move(d.influence), std::move(d.transition)};
}

namespace {

void check_strides(std::span<const double> strides) {
  if (strides.empty()) throw DomainError("scale set is empty");
  for (std::size_t i = 0; i < strides.size(); ++i) {
    if (!(strides[i] > 0.0)) throw DomainError("strides must be positive");
    if (i > 0 && !(strides[i] > strides[i - 1])) throw DomainError("strides must be strictly ascending");
  }
}

}  // namespace

double scale_mismatch(double tau, std::span<const double> strides) {
  check_strides(strides);
  if (!(tau >= strides.front() && tau <= strides.back())) {
    throw DomainError("tau = " + std::to_string(tau) + " outside [" + std::to_string(strides.front()) + ", " +
                      std::to_string(strides.back()) + "]");
  }
  double best = std::abs(std::log(tau) - std::log(strides[0]));
  for (double s : strides) best = std::min(best, std::abs(std::log(tau) - std::log(s)));
  return best;
}

double worst_case_mismatch(std::span<const double> strides) {
  check_strides(strides);
  double gap = 0.0;
  for (std::size_t i = 1; i < strides.size(); ++i) gap = std::max(gap, std::log(strides[i] / strides[i - 1]));
  return 0.5 * gap;
}

BoundCheck noise_suppression_bound(const Tensor& m, const Tensor& s, const Tensor& n) {
  const Matrix mm = to_matrix(m);
  const Eigen::VectorXd sv = to_vector(s, "s"), nv = to_vector(n, "n");
  if (sv.size() != mm.cols() || nv.size() != mm.cols()) {
    throw DimensionError("noise_suppression_bound: M " + to_string(m.shape()) + " vs vectors of length " +
                         std::to_string(sv.size()) + ", " + std::to_string(nv.size()));
  }
  const double s_norm = sv.norm(), n_norm = nv.norm();
  if (!(s_norm > 0.0)) throw DomainError("noise_suppression_bound: signal must be nonzero");
  const double ms = (mm * sv).norm(), mn = (mm * nv).norm();
  BoundCheck r;
  r.epsilon = std::max(0.0, 1.0 - ms / s_norm);
  r.gamma = n_norm > 0.0 ? mn / n_norm : 0.0;
  if (!(ms > 0.0)) {
    r.degenerate = true;
    return r;
  }
  r.lhs = mn / ms;
  r.rhs = r.gamma / (1.0 - r.epsilon) * (n_norm / s_norm);
  r.holds = r.lhs <= r.rhs + 1e-12 * std::max(1.0, r.rhs);
  return r;
}

Tensor inverse_sqrt_pd(const Tensor& w) {
  const Matrix wm = to_matrix(w);
  check_symmetric(wm, "matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> es(wm);
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  if (es.eigenvalues().minCoeff() <= 0.0) throw NumericError("matrix is not positive definite");
  const Eigen::VectorXd inv = es.eigenvalues().cwiseMax(1e-12).cwiseSqrt().cwiseInverse();
  return to_tensor(es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose());
}

double mixer_mi(const Tensor& m, const MixerInputs& in) {
  const Matrix mm = to_matrix(m);
  const Matrix w = noise_matrix(in);
  const Matrix ss = to_matrix(in.sigma_s);
  check_symmetric(ss, "Sigma_s");
  if (mm.cols() != w.rows() || ss.rows() != w.rows()) {
    throw DimensionError("mixer_mi: M " + to_string(m.shape()) + " vs covariance size " + std::to_string(w.rows()));
  }
  const Matrix noise = mm * w * mm.transpose();
  const Matrix total = mm * (ss + w) * mm.transpose();
  return 0.5 * (log_det_pd(total, "M (Sigma_s + W) M^T") - log_det_pd(noise, "M W M^T"));
}

OptimalMixer optimal_mixer(const MixerInputs& in) {
  const Matrix w = noise_matrix(in);
  const Matrix ss = to_matrix(in.sigma_s);
  check_symmetric(ss, "Sigma_s");
  if (ss.rows() != w.rows()) throw DimensionError("optimal_mixer: Sigma_s and Sigma_n differ in size");
  const auto C = static_cast<std::size_t>(w.rows());
  if (in.rank < 1 || in.rank > C) throw DomainError("optimal_mixer: rank must be in [1, C]");
  const Matrix w_isqrt = to_matrix(inverse_sqrt_pd(to_tensor(w)));
  Matrix k = w_isqrt * ss * w_isqrt;
  k = 0.5 * (k + k.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(k);
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition of K failed");
  const auto r = static_cast<Eigen::Index>(in.rank);
  const Eigen::VectorXd lambda = es.eigenvalues().reverse();
  const Matrix u = es.eigenvectors().rowwise().reverse().leftCols(r);
  OptimalMixer out;
  out.mixer = to_tensor(u.transpose() * w_isqrt);
  for (Eigen::Index i = 0; i < r; ++i) out.mi += 0.5 * std::log1p(std::max(0.0, lambda(i)));
  out.eigenvalues = Tensor({C}, std::vector<double>(lambda.data(), lambda.data() + lambda.size()));
  return out;
}

double whitening_residual(const Tensor& m, const MixerInputs& in) {
  const Matrix mm = to_matrix(m);
  const Matrix p = mm * noise_matrix(in) * mm.transpose();
  return (p - Matrix::Identity(p.rows(), p.cols())).cwiseAbs().maxCoeff();
}

}  // namespace medmamba::analysis
