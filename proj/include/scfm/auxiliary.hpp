#pragma once

#include <string>
#include <vector>

#include "scfm/error.hpp"
#include "scfm/types.hpp"

namespace scfm {

/// pi_k(i) = fraction of steps chain k spends in state i (M-1 = shared).
inline std::vector<VectorXd> estimate_priors(const AssignmentMatrix& r) {
  const ModelShape& sh = r.shape();
  std::vector<VectorXd> out(static_cast<std::size_t>(sh.K), VectorXd::Zero(sh.M));
  const Index T = r.T();
  if (T == 0) return out;
  for (int k = 0; k < sh.K; ++k) {
    auto& p = out[static_cast<std::size_t>(k)];
    for (Index t = 0; t < T; ++t) p(r.state(k, t)) += 1.0;
    p /= static_cast<double>(T);
  }
  return out;
}

struct TransitionEstimate {
  /// Joint frequencies: raw(i, j) = #(next = i, current = j) / (T - 1).
  std::vector<MatrixXd> raw;
  /// Column-normalised counts (column-stochastic); empty columns uniform.
  std::vector<MatrixXd> normalized;
  std::vector<std::string> warnings;
};

inline TransitionEstimate estimate_transitions(const AssignmentMatrix& r) {
  const ModelShape& sh = r.shape();
  const Index T = r.T();
  detail::require(T >= 2, ErrorCode::PreconditionViolation, "transition estimation needs T >= 2");
  TransitionEstimate out;
  for (int k = 0; k < sh.K; ++k) {
    MatrixXd counts = MatrixXd::Zero(sh.M, sh.M);
    for (Index t = 0; t + 1 < T; ++t) counts(r.state(k, t + 1), r.state(k, t)) += 1.0;
    out.raw.push_back(counts / static_cast<double>(T - 1));
    MatrixXd norm = counts;
    for (int j = 0; j < sh.M; ++j) {
      const double total = counts.col(j).sum();
      if (total > 0.0) {
        norm.col(j) /= total;
      } else {
        norm.col(j).setConstant(1.0 / sh.M);
        out.warnings.push_back("chain " + std::to_string(k + 1) + " never leaves state " + std::to_string(j + 1) +
                               "; uniform column used");
      }
    }
    out.normalized.push_back(std::move(norm));
  }
  return out;
}

/// Sigma = 1/(T-1) sum_t (x_t - (O R)_t)(x_t - (O R)_t)^T.
inline MatrixXd estimate_covariance(const MatrixXd& x, const EmissionMatrix& o, const AssignmentMatrix& r) {
  detail::require(x.rows() == o.shape().L && x.cols() == r.T() && o.shape() == r.shape(), ErrorCode::ShapeMismatch,
                  "estimate_covariance: X, O and R disagree");
  detail::require(r.T() >= 2, ErrorCode::PreconditionViolation, "covariance estimation needs T >= 2");
  const MatrixXd recon = r.form() == Form::Standard ? MatrixXd(o.full() * r.encoded())
                                                    : MatrixXd(o.reduced() * r.encoded());
  const MatrixXd e = x - recon;
  MatrixXd sigma = MatrixXd::Zero(x.rows(), x.rows());
  sigma.selfadjointView<Eigen::Lower>().rankUpdate(e, 1.0 / static_cast<double>(r.T() - 1));
  sigma.triangularView<Eigen::StrictlyUpper>() = sigma.transpose();
  return sigma;
}

}  // namespace scfm
