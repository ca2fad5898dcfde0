#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "scfm/error.hpp"
#include "scfm/model_core.hpp"
#include "scfm/rng.hpp"
#include "scfm/types.hpp"

namespace scfm {

enum class ChainType { IID, Markov };

inline std::string to_string(ChainType c) { return c == ChainType::IID ? "IID" : "Markov"; }

/// Synthetic-data settings. Chain parameters index states 0..M-1 with M-1
/// the shared state. Transition matrices are column-stochastic:
/// A(i, j) = Pr(next = i | current = j).
struct GeneratorConfig {
  ModelShape shape{50, 3, 2};
  double dictionary_variance = 10.0;
  double noise_variance = 0.5;
  Index T = 200;
  ChainType chain_type = ChainType::IID;
  /// One length-M simplex vector per chain; empty means uniform.
  std::vector<VectorXd> priors;
  /// One M x M column-stochastic matrix per chain; empty means uniform.
  std::vector<MatrixXd> transitions;
  /// Draw priors/transitions from a flat Dirichlet instead of uniform when
  /// none are given explicitly.
  bool random_chain_parameters = false;
  std::uint64_t seed = 0;
  bool filter_incoherence = true;
  int max_retries = 1000;

  void validate() const {
    shape.validate();
    detail::require(dictionary_variance >= 0.0, ErrorCode::InvalidArgument, "dictionary_variance must be >= 0");
    detail::require(noise_variance >= 0.0, ErrorCode::InvalidArgument, "noise_variance must be >= 0");
    detail::require(T >= 0, ErrorCode::InvalidArgument, "T must be >= 0");
    detail::require(max_retries >= 1, ErrorCode::InvalidArgument, "max_retries must be >= 1");
    constexpr double tol = 1e-9;
    detail::require(priors.empty() || static_cast<int>(priors.size()) == shape.K, ErrorCode::InvalidArgument,
                    "priors must list one vector per chain");
    for (const auto& p : priors) {
      detail::require(p.size() == shape.M, ErrorCode::ShapeMismatch, "each prior must have M entries");
      detail::require(p.minCoeff() >= 0.0 && std::abs(p.sum() - 1.0) <= tol, ErrorCode::InvalidArgument,
                      "each prior must lie in the probability simplex");
    }
    detail::require(transitions.empty() || static_cast<int>(transitions.size()) == shape.K,
                    ErrorCode::InvalidArgument, "transitions must list one matrix per chain");
    for (const auto& a : transitions) {
      detail::require(a.rows() == shape.M && a.cols() == shape.M, ErrorCode::ShapeMismatch,
                      "each transition matrix must be M x M");
      detail::require(a.minCoeff() >= 0.0 && ((a.colwise().sum().array() - 1.0).abs() <= tol).all(),
                      ErrorCode::InvalidArgument, "each transition matrix must be column-stochastic");
    }
  }
};

namespace detail {

enum Stream : std::uint64_t { kDictionary = 1, kAssignments = 2, kNoise = 3, kChainParams = 4 };

inline VectorXd flat_dirichlet(int n, Rng& rng) {
  std::gamma_distribution<double> g(1.0, 1.0);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = g(rng);
  return v / v.sum();
}

}  // namespace detail

/// Priors actually used by the generator (explicit, random or uniform).
inline std::vector<VectorXd> resolved_priors(const GeneratorConfig& cfg) {
  if (!cfg.priors.empty()) return cfg.priors;
  const int M = cfg.shape.M;
  std::vector<VectorXd> out;
  Rng rng(derive_seed(cfg.seed, detail::kChainParams));
  for (int k = 0; k < cfg.shape.K; ++k)
    out.push_back(cfg.random_chain_parameters ? detail::flat_dirichlet(M, rng) : VectorXd::Constant(M, 1.0 / M));
  return out;
}

inline std::vector<MatrixXd> resolved_transitions(const GeneratorConfig& cfg) {
  if (!cfg.transitions.empty()) return cfg.transitions;
  const int M = cfg.shape.M;
  std::vector<MatrixXd> out;
  Rng rng(derive_seed(cfg.seed, detail::kChainParams));
  for (int k = 0; k < cfg.shape.K; ++k) {
    MatrixXd a = MatrixXd::Constant(M, M, 1.0 / M);
    if (cfg.random_chain_parameters)
      for (int j = 0; j < M; ++j) a.col(j) = detail::flat_dirichlet(M, rng);
    out.push_back(std::move(a));
  }
  return out;
}

struct DictionaryDraw {
  EmissionMatrix emission;
  /// Number of rejected draws before the returned one.
  int retries = 0;
  IncoherenceReport incoherence;
};

/// Gaussian dictionary, redrawn until the incoherence conditions hold
/// (unless filtering is disabled).
inline DictionaryDraw sample_dictionary(const GeneratorConfig& cfg) {
  cfg.validate();
  const ModelShape& sh = cfg.shape;
  const double sd = std::sqrt(cfg.dictionary_variance);
  Rng rng(derive_seed(cfg.seed, detail::kDictionary));
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    MatrixXd w = gaussian_matrix(sh.L, sh.nonshared_columns(), sd, rng);
    VectorXd s = gaussian_matrix(sh.L, 1, sd, rng).col(0);
    EmissionMatrix o(sh, std::move(w), std::move(s));
    auto rep = incoherence_check(o);
    if (!cfg.filter_incoherence || rep.holds) return {std::move(o), attempt, std::move(rep)};
  }
  throw Error(ErrorCode::IncoherenceUnsatisfiable,
              "no incoherent dictionary in " + std::to_string(cfg.max_retries) + " draws (L=" +
                  std::to_string(sh.L) + ", M=" + std::to_string(sh.M) + ", K=" + std::to_string(sh.K) + ")");
}

/// Chain states for T steps, i.i.d. from the priors or following the Markov
/// chains from a uniform initial state.
inline AssignmentMatrix sample_assignments(const GeneratorConfig& cfg) {
  cfg.validate();
  const ModelShape& sh = cfg.shape;
  Rng rng(derive_seed(cfg.seed, detail::kAssignments));
  MatrixXi states(sh.K, cfg.T);
  if (cfg.chain_type == ChainType::IID) {
    const auto pri = resolved_priors(cfg);
    std::vector<std::discrete_distribution<int>> dists;
    for (const auto& p : pri) dists.emplace_back(p.data(), p.data() + p.size());
    for (Index t = 0; t < cfg.T; ++t)
      for (int k = 0; k < sh.K; ++k) states(k, t) = dists[static_cast<std::size_t>(k)](rng);
  } else {
    const auto trans = resolved_transitions(cfg);
    std::uniform_int_distribution<int> init(0, sh.M - 1);
    std::vector<std::vector<std::discrete_distribution<int>>> next(static_cast<std::size_t>(sh.K));
    for (int k = 0; k < sh.K; ++k)
      for (int j = 0; j < sh.M; ++j) {
        const auto& a = trans[static_cast<std::size_t>(k)];
        VectorXd col = a.col(j);
        next[static_cast<std::size_t>(k)].emplace_back(col.data(), col.data() + col.size());
      }
    for (Index t = 0; t < cfg.T; ++t)
      for (int k = 0; k < sh.K; ++k)
        states(k, t) = t == 0 ? init(rng)
                              : next[static_cast<std::size_t>(k)][static_cast<std::size_t>(states(k, t - 1))](rng);
  }
  return {sh, Form::SharedComponent, std::move(states)};
}

/// X = O R + eps with eps ~ N(0, noise_variance I) per column.
inline MatrixXd emit_observations(const EmissionMatrix& o, const AssignmentMatrix& r, double noise_variance,
                                  std::uint64_t seed) {
  detail::require(o.shape() == r.shape(), ErrorCode::ShapeMismatch, "emission and assignment shapes differ");
  detail::require(noise_variance >= 0.0, ErrorCode::InvalidArgument, "noise variance must be >= 0");
  MatrixXd x = r.form() == Form::Standard ? MatrixXd(o.full() * r.encoded()) : MatrixXd(o.reduced() * r.encoded());
  if (noise_variance > 0.0) {
    Rng rng(derive_seed(seed, detail::kNoise));
    x += gaussian_matrix(x.rows(), x.cols(), std::sqrt(noise_variance), rng);
  }
  return x;
}

struct SyntheticData {
  EmissionMatrix emission;
  int dictionary_retries = 0;
  AssignmentMatrix assignments;
  MatrixXd observations;
  std::vector<VectorXd> priors;
  std::vector<MatrixXd> transitions;
};

inline SyntheticData generate(const GeneratorConfig& cfg) {
  SyntheticData d;
  auto draw = sample_dictionary(cfg);
  d.emission = std::move(draw.emission);
  d.dictionary_retries = draw.retries;
  d.assignments = sample_assignments(cfg);
  d.observations = emit_observations(d.emission, d.assignments, cfg.noise_variance, cfg.seed);
  if (cfg.chain_type == ChainType::IID)
    d.priors = resolved_priors(cfg);
  else
    d.transitions = resolved_transitions(cfg);
  return d;
}

}  // namespace scfm
