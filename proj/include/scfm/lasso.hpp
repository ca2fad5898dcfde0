#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "scfm/error.hpp"
#include "scfm/types.hpp"

namespace scfm {

// Columnwise l1-regularised least squares,
//   min_h ||y - W h||_2^2 + lambda ||h||_1   (optionally h >= 0),
// solved by cyclic coordinate descent.

struct LassoOptions {
  double lambda = 1.0;
  int max_iters = 1000;
  double tol = 1e-8;
  bool nonnegative = true;

  void validate() const {
    detail::require(lambda > 0.0, ErrorCode::InvalidArgument, "lambda must be > 0");
    detail::require(tol > 0.0, ErrorCode::InvalidArgument, "tol must be > 0");
    detail::require(max_iters >= 1, ErrorCode::InvalidArgument, "max_iters must be >= 1");
  }
};

struct LassoResult {
  VectorXd h;
  int iterations = 0;
  bool converged = false;
  /// Largest per-coordinate optimality residual, in coefficient units.
  double kkt_residual = 0.0;
  /// Objective after each full coordinate pass (index 0 is the start).
  std::vector<double> objective_trace;
};

inline double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

inline double lasso_objective(const VectorXd& y, const MatrixXd& w, const VectorXd& h, double lambda) {
  return (y - w * h).squaredNorm() + lambda * h.lpNorm<1>();
}

/// Distance between each coordinate and its exact coordinate-wise minimiser
/// with the others held fixed; zero iff the subgradient optimality
/// conditions hold for that coordinate. Returns the maximum over coordinates.
inline double lasso_kkt_residual(const VectorXd& y, const MatrixXd& w, const VectorXd& h, double lambda,
                                 bool nonnegative) {
  const VectorXd r = y - w * h;
  double worst = 0.0;
  for (Index j = 0; j < w.cols(); ++j) {
    const double z = w.col(j).squaredNorm();
    double target = 0.0;
    if (z > 0.0) {
      const double rho = w.col(j).dot(r) + h(j) * z;
      target = soft_threshold(rho, lambda / 2.0) / z;
      if (nonnegative) target = std::max(target, 0.0);
    }
    worst = std::max(worst, std::abs(target - h(j)));
  }
  return worst;
}

inline LassoResult lasso_column(const VectorXd& y, const MatrixXd& w, const LassoOptions& opts) {
  opts.validate();
  detail::require(y.size() == w.rows(), ErrorCode::ShapeMismatch, "lasso_column: dim(y) != rows(W)");
  const Index n = w.cols();
  LassoResult res;
  res.h = VectorXd::Zero(n);
  const VectorXd norms = w.colwise().squaredNorm().transpose();
  VectorXd r = y;
  res.objective_trace.push_back(lasso_objective(y, w, res.h, opts.lambda));
  const double half = opts.lambda / 2.0;

  for (int it = 0; it < opts.max_iters; ++it) {
    double max_change = 0.0;
    for (Index j = 0; j < n; ++j) {
      const double z = norms(j);
      if (z <= 0.0) continue;
      const double old = res.h(j);
      const double rho = w.col(j).dot(r) + old * z;
      double upd = soft_threshold(rho, half) / z;
      if (opts.nonnegative) upd = std::max(upd, 0.0);
      const double delta = upd - old;
      if (delta != 0.0) {
        r.noalias() -= delta * w.col(j);
        res.h(j) = upd;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    res.iterations = it + 1;
    r = y - w * res.h;
    res.objective_trace.push_back(r.squaredNorm() + opts.lambda * res.h.lpNorm<1>());
    if (max_change < opts.tol) {
      res.kkt_residual = lasso_kkt_residual(y, w, res.h, opts.lambda, opts.nonnegative);
      if (res.kkt_residual <= opts.tol) {
        res.converged = true;
        return res;
      }
    }
  }
  res.kkt_residual = lasso_kkt_residual(y, w, res.h, opts.lambda, opts.nonnegative);
  res.converged = res.kkt_residual <= 10.0 * opts.tol;
  return res;
}

struct LassoMatrixResult {
  MatrixXd H;
  int nonconverged = 0;
  double max_kkt_residual = 0.0;
};

inline LassoMatrixResult lasso_matrix(const MatrixXd& y, const MatrixXd& w, const LassoOptions& opts) {
  detail::require(y.rows() == w.rows(), ErrorCode::ShapeMismatch, "lasso_matrix: rows(Y) != rows(W)");
  LassoMatrixResult out;
  out.H = MatrixXd::Zero(w.cols(), y.cols());
  for (Index t = 0; t < y.cols(); ++t) {
    auto r = lasso_column(y.col(t), w, opts);
    out.H.col(t) = r.h;
    out.nonconverged += !r.converged;
    out.max_kkt_residual = std::max(out.max_kkt_residual, r.kkt_residual);
  }
  return out;
}

/// Regularisation policy shared by grouping and assignment inference. With
/// no explicit lambda, each column uses lambda_factor * max|W^T y|.
struct CodingOptions {
  std::optional<double> lambda;
  double lambda_factor = 0.1;
  int max_iters = 1000;
  double tol = 1e-8;
  bool nonnegative = true;

  /// Lambda for one column; 0 means y is orthogonal to every column of W and
  /// the solution is h = 0.
  double lambda_for(const VectorXd& y, const MatrixXd& w) const {
    if (lambda) return *lambda;
    return lambda_factor * (w.transpose() * y).cwiseAbs().maxCoeff();
  }

  LassoResult solve(const VectorXd& y, const MatrixXd& w) const {
    const double lam = w.cols() ? lambda_for(y, w) : 0.0;
    if (!(lam > 0.0)) {
      detail::require(!lambda, ErrorCode::InvalidArgument, "lambda must be > 0");
      LassoResult zero;
      zero.h = VectorXd::Zero(w.cols());
      zero.converged = true;
      zero.objective_trace.push_back(y.squaredNorm());
      return zero;
    }
    return lasso_column(y, w, {lam, max_iters, tol, nonnegative});
  }
};

struct InferredAssignments {
  AssignmentMatrix assignments;
  /// Raw (K(M-1)+1) x T lasso codes before thresholding.
  MatrixXd codes;
  int nonconverged_columns = 0;
  /// Fraction of chain slots whose best coefficient lies in
  /// [threshold/2, threshold): plausibly active but rejected.
  double rejection_rate = 0.0;
  bool high_rejection = false;
};

/// Sparse-codes each observation against [non-shared columns, s], then
/// thresholds and projects every column onto a valid shared-component
/// assignment (per chain: the largest super-threshold state, else shared).
inline InferredAssignments infer_assignments(const EmissionMatrix& o, const MatrixXd& x, const CodingOptions& opts = {},
                                             double binarize_threshold = 0.5) {
  const ModelShape& sh = o.shape();
  detail::require(x.rows() == sh.L, ErrorCode::ShapeMismatch, "observations must have L rows");
  const MatrixXd design = o.reduced();
  const int per = sh.M - 1;
  InferredAssignments out;
  out.codes.resize(design.cols(), x.cols());
  MatrixXi states(sh.K, x.cols());
  Index rejected = 0;
  for (Index t = 0; t < x.cols(); ++t) {
    auto r = opts.solve(x.col(t), design);
    out.codes.col(t) = r.h;
    out.nonconverged_columns += !r.converged;
    for (int k = 0; k < sh.K; ++k) {
      int best = -1;
      double best_v = -std::numeric_limits<double>::infinity();
      for (int m = 0; m < per; ++m) {
        const double v = r.h(static_cast<Index>(k) * per + m);
        if (v > best_v) {
          best_v = v;
          best = m;
        }
      }
      const bool active = best >= 0 && best_v >= binarize_threshold;
      states(k, t) = active ? best : sh.M - 1;
      if (!active && best >= 0 && best_v >= binarize_threshold / 2.0) ++rejected;
    }
  }
  const Index slots = static_cast<Index>(sh.K) * x.cols();
  out.rejection_rate = slots ? static_cast<double>(rejected) / static_cast<double>(slots) : 0.0;
  out.high_rejection = out.rejection_rate > 0.1;
  out.assignments = AssignmentMatrix(sh, Form::SharedComponent, std::move(states));
  return out;
}

}  // namespace scfm
