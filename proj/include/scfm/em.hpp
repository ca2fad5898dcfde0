#pragma once

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "scfm/error.hpp"
#include "scfm/model_core.hpp"
#include "scfm/rng.hpp"
#include "scfm/types.hpp"

namespace scfm {

// Exact EM for the shared-component factorial mixture: the M^K combination
// means are O~ R~c, responsibilities run over all combinations, and the
// M-step solves the weighted normal equations for the K(M-1)+1 free columns.

struct ModelParams {
  EmissionMatrix emission;
  /// Weights of the M^K combinations (lexicographic tuple order).
  VectorXd combination_priors;
  /// Per-chain marginals of combination_priors.
  std::vector<VectorXd> chain_priors;
  /// Spherical noise variance.
  double sigma2 = 1.0;
};

struct EMConfig {
  int restarts = 10;
  int max_iters = 200;
  double rel_tol = 1e-6;
  double init_perturbation = 0.1;
  std::uint64_t seed = 0;
  bool keep_responsibilities = false;
  /// Start every restart from these parameters instead of the perturbed mean.
  std::optional<ModelParams> init;

  void validate() const {
    detail::require(restarts >= 1, ErrorCode::InvalidArgument, "restarts must be >= 1");
    detail::require(max_iters >= 1, ErrorCode::InvalidArgument, "max_iters must be >= 1");
    detail::require(rel_tol >= 0.0 && init_perturbation > 0.0, ErrorCode::InvalidArgument,
                    "rel_tol must be >= 0 and init_perturbation > 0");
  }
};

struct RestartTrace {
  std::vector<double> loglik;
  bool converged = false;
  int singular_msteps = 0;
  /// Iterations whose log-likelihood fell by more than 1e-9 relative.
  int monotone_violations = 0;
};

struct EMResult {
  ModelParams params;
  /// Log-likelihood per iteration of the best restart.
  std::vector<double> loglik_trace;
  int best_restart = 0;
  std::vector<RestartTrace> restarts;
  /// T x M^K, filled when keep_responsibilities is set.
  MatrixXd responsibilities;
};

inline std::vector<VectorXd> marginal_chain_priors(const ModelShape& shape, const VectorXd& weights) {
  const auto comb = build_combination_matrix(shape, Form::Standard);
  std::vector<VectorXd> out(static_cast<std::size_t>(shape.K), VectorXd::Zero(shape.M));
  for (Index l = 0; l < comb.columns(); ++l) {
    const auto t = comb.tuple(l);
    for (int k = 0; k < shape.K; ++k) out[static_cast<std::size_t>(k)](t[static_cast<std::size_t>(k)]) += weights(l);
  }
  return out;
}

/// Combination means, L x M^K.
inline MatrixXd combination_means(const EmissionMatrix& o) {
  const auto comb = build_combination_matrix(o.shape(), Form::SharedComponent);
  return o.reduced() * comb.matrix.cast<double>();
}

/// E-step: fills gamma (T x M^K) and returns the log-likelihood.
inline double em_e_step(const MatrixXd& x, const MatrixXd& means, const VectorXd& weights, double sigma2,
                        MatrixXd* gamma) {
  const Index T = x.cols(), n = means.cols();
  const double L = static_cast<double>(x.rows());
  const double norm = -0.5 * L * std::log(2.0 * std::numbers::pi * sigma2);
  VectorXd logw(n);
  for (Index l = 0; l < n; ++l)
    logw(l) = weights(l) > 0.0 ? std::log(weights(l)) : -std::numeric_limits<double>::infinity();
  if (gamma) gamma->resize(T, n);
  double ll = 0.0;
  VectorXd lp(n);
  for (Index t = 0; t < T; ++t) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index l = 0; l < n; ++l) {
      lp(l) = std::isfinite(logw(l)) ? logw(l) + norm - (x.col(t) - means.col(l)).squaredNorm() / (2.0 * sigma2)
                                     : -std::numeric_limits<double>::infinity();
      mx = std::max(mx, lp(l));
    }
    double acc = 0.0;
    for (Index l = 0; l < n; ++l)
      if (std::isfinite(lp(l))) acc += std::exp(lp(l) - mx);
    const double lse = mx + std::log(acc);
    ll += lse;
    if (gamma)
      for (Index l = 0; l < n; ++l) (*gamma)(t, l) = std::isfinite(lp(l)) ? std::exp(lp(l) - lse) : 0.0;
  }
  return ll;
}

inline double loglik(const MatrixXd& x, const ModelParams& params) {
  detail::require(x.rows() == params.emission.shape().L, ErrorCode::ShapeMismatch, "loglik: X must have L rows");
  detail::require(params.sigma2 > 0.0, ErrorCode::InvalidArgument, "loglik: sigma2 must be > 0");
  if (x.cols() == 0) return 0.0;
  return em_e_step(x, combination_means(params.emission), params.combination_priors, params.sigma2, nullptr);
}

struct MStepResult {
  MatrixXd reduced;  // L x (K(M-1)+1)
  VectorXd weights;
  double sigma2 = 0.0;
  bool singular = false;
};

/// Weighted least squares for the free columns F:
///   F (Rc N Rc^T) = (X Gamma) Rc^T,  N = diag(column sums of Gamma).
inline MStepResult em_m_step(const MatrixXd& x, const MatrixXd& gamma, const MatrixXi& rc, double sigma2_floor) {
  const Index T = x.cols();
  const MatrixXd r = rc.cast<double>();
  const VectorXd mass = gamma.colwise().sum().transpose();
  const MatrixXd s = x * gamma;  // L x n
  MatrixXd g = r * mass.asDiagonal() * r.transpose();
  const MatrixXd rhs = r * s.transpose();  // P x L
  MStepResult out;
  Eigen::LDLT<MatrixXd> ldlt(g);
  const VectorXd d = ldlt.vectorD();
  const double dmax = d.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-12 * std::max(dmax, 1e-300)) {
    out.singular = true;
    g.diagonal().array() += 1e-8 * std::max(1.0, g.diagonal().mean());
    ldlt.compute(g);
  }
  out.reduced = ldlt.solve(rhs).transpose();
  out.weights = mass / static_cast<double>(T);
  const MatrixXd means = out.reduced * r;
  double sse = 0.0;
  for (Index t = 0; t < T; ++t)
    for (Index l = 0; l < means.cols(); ++l)
      if (gamma(t, l) > 0.0) sse += gamma(t, l) * (x.col(t) - means.col(l)).squaredNorm();
  out.sigma2 = std::max(sse / (static_cast<double>(T) * static_cast<double>(x.rows())), sigma2_floor);
  return out;
}

inline EMResult em_fit(const MatrixXd& x, const ModelShape& shape, const EMConfig& cfg = {}) {
  cfg.validate();
  shape.validate();
  detail::require(x.rows() == shape.L, ErrorCode::ShapeMismatch, "em_fit: X must have L rows");
  detail::require(x.cols() >= 1, ErrorCode::InsufficientData, "em_fit: no observations");
  const auto comb = build_combination_matrix(shape, Form::SharedComponent);
  const Index n = comb.columns();
  const Index T = x.cols();
  const MatrixXd rc = comb.matrix.cast<double>();

  const VectorXd mean = x.rowwise().mean();
  const VectorXd sd = ((x.colwise() - mean).array().square().rowwise().sum() /
                       static_cast<double>(std::max<Index>(T - 1, 1)))
                          .sqrt()
                          .matrix();
  double var0 = sd.squaredNorm() / static_cast<double>(shape.L);
  if (!(var0 > 0.0)) var0 = 1.0;
  const double floor = 1e-10 * var0;

  EMResult best;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < cfg.restarts; ++r) {
    MatrixXd f;
    VectorXd w;
    double sigma2;
    if (cfg.init) {
      f = cfg.init->emission.reduced();
      w = cfg.init->combination_priors;
      sigma2 = cfg.init->sigma2;
      detail::require(f.rows() == shape.L && f.cols() == shape.reduced_rows() && w.size() == n && sigma2 > 0.0,
                      ErrorCode::ShapeMismatch, "em_fit: initial parameters do not match the shape");
    } else {
      Rng rng(derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(r)));
      const MatrixXd z = gaussian_matrix(shape.L, shape.reduced_rows(), 1.0, rng);
      f = (z.array().colwise() * (cfg.init_perturbation * sd).array()).matrix();
      f.colwise() += mean;
      w = VectorXd::Constant(n, 1.0 / static_cast<double>(n));
      sigma2 = var0;
    }

    RestartTrace trace;
    MatrixXd gamma;
    double prev = 0.0;
    for (int it = 0;; ++it) {
      const double ll = em_e_step(x, f * rc, w, sigma2, &gamma);
      if (it > 0 && ll < prev - 1e-9 * std::abs(prev)) ++trace.monotone_violations;
      trace.loglik.push_back(ll);
      if (it > 0 && std::abs(ll - prev) <= cfg.rel_tol * std::abs(prev)) {
        trace.converged = true;
        break;
      }
      if (it == cfg.max_iters) break;
      prev = ll;
      auto ms = em_m_step(x, gamma, comb.matrix, floor);
      trace.singular_msteps += ms.singular;
      f = std::move(ms.reduced);
      w = std::move(ms.weights);
      sigma2 = ms.sigma2;
    }
    const double final_ll = trace.loglik.back();
    best.restarts.push_back(trace);
    if (r == 0 || final_ll > best_ll) {
      best_ll = final_ll;
      best.best_restart = r;
      best.loglik_trace = trace.loglik;
      best.params.emission = EmissionMatrix::from_reduced(shape, f);
      best.params.combination_priors = w;
      best.params.sigma2 = sigma2;
      if (cfg.keep_responsibilities) best.responsibilities = gamma;
    }
  }
  best.params.chain_priors = marginal_chain_priors(shape, best.params.combination_priors);
  return best;
}

}  // namespace scfm
