#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "scfm/auxiliary.hpp"
#include "scfm/clustering.hpp"
#include "scfm/error.hpp"
#include "scfm/generator.hpp"
#include "scfm/hungarian.hpp"
#include "scfm/lasso.hpp"
#include "scfm/recovery.hpp"
#include "scfm/types.hpp"

namespace scfm {

inline constexpr int kMaxErrorChains = 4;

struct DictionaryAlignment {
  double error = 0.0;
  /// block_perm[k] = block of O_true matched to block k of O_hat.
  std::vector<int> block_perm;
  /// column_perm[k][m] = non-shared column of the matched true block for
  /// non-shared column m of block k of O_hat.
  std::vector<std::vector<int>> column_perm;
};

/// Frobenius distance between two emission matrices minimised over block
/// permutations and within-block column permutations; the shared column is
/// never permuted. Blocks are enumerated (K <= 4), columns matched with the
/// assignment solver.
inline DictionaryAlignment align_dictionaries(const EmissionMatrix& o_hat, const EmissionMatrix& o_true) {
  const ModelShape& sh = o_true.shape();
  detail::require(o_hat.shape() == sh, ErrorCode::ShapeMismatch, "dictionary_error: shapes differ");
  if (sh.K > kMaxErrorChains)
    throw Error(ErrorCode::KTooLarge, "dictionary_error enumerates K! block permutations; K = " +
                                          std::to_string(sh.K) + " exceeds " + std::to_string(kMaxErrorChains));
  const int per = sh.M - 1;
  // cost[a][b]: best matching of hat block a against true block b.
  std::vector<std::vector<Assignment>> match(static_cast<std::size_t>(sh.K));
  for (int a = 0; a < sh.K; ++a)
    for (int b = 0; b < sh.K; ++b)
      match[static_cast<std::size_t>(a)].push_back(
          solve_assignment(pairwise_sq_distances(o_hat.nonshared().middleCols(static_cast<Index>(a) * per, per),
                                                 o_true.nonshared().middleCols(static_cast<Index>(b) * per, per))));
  std::vector<int> perm(static_cast<std::size_t>(sh.K));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  DictionaryAlignment out;
  do {
    double c = 0.0;
    for (int a = 0; a < sh.K; ++a) c += match[static_cast<std::size_t>(a)][static_cast<std::size_t>(perm[static_cast<std::size_t>(a)])].cost;
    if (c < best) {
      best = c;
      out.block_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  for (int a = 0; a < sh.K; ++a)
    out.column_perm.push_back(
        match[static_cast<std::size_t>(a)][static_cast<std::size_t>(out.block_perm[static_cast<std::size_t>(a)])].row_to_col);
  const double shared = sh.K * (o_hat.shared() - o_true.shared()).squaredNorm();
  out.error = std::sqrt(std::max(0.0, best + shared));
  return out;
}

inline double dictionary_error(const EmissionMatrix& o_hat, const EmissionMatrix& o_true) {
  return align_dictionaries(o_hat, o_true).error;
}

struct PipelineOptions {
  ClusterOptions cluster;
  LearnOptions learn;
  CodingOptions coding;
  double threshold = 0.5;
  ChainType mode = ChainType::IID;
  /// Run recovery even when clustering reports missing combinations.
  bool force = false;
};

struct EstimatedParams {
  std::vector<VectorXd> priors;
  std::optional<TransitionEstimate> transitions;
  MatrixXd covariance;
};

struct StageTimings {
  double clustering = 0.0;
  double recovery = 0.0;
  double inference = 0.0;
  double estimation = 0.0;
  /// Dictionary learning only: clustering plus recovery.
  double learning() const { return clustering + recovery; }
};

struct PipelineResult {
  ClusteredCombinations clusters;
  RecoveredDictionary dictionary;
  InferredAssignments assignments;
  EstimatedParams params;
  StageTimings timings;
};

namespace detail {

template <class F>
auto staged(const char* stage, double& seconds, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    auto r = f();
    seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  } catch (const Error& e) {
    throw e.with_stage(stage);
  }
}

}  // namespace detail

/// Clustering -> emission learning -> assignment inference -> priors or
/// transitions -> covariance. Errors carry the failing stage name.
inline PipelineResult run_pipeline(const MatrixXd& x, const ModelShape& shape, const PipelineOptions& opts = {}) {
  PipelineResult out;
  out.clusters = detail::staged("clustering", out.timings.clustering, [&] {
    auto c = estimate_combinations(x, shape, opts.cluster);
    if (c.degenerate() && !opts.force)
      throw Error(ErrorCode::DegenerateClusters,
                  std::to_string(c.missing_count) + " of " + std::to_string(c.centers.cols()) +
                      " combinations missing after clustering");
    return c;
  });
  out.dictionary = detail::staged("recovery", out.timings.recovery,
                                  [&] { return learn_emissions(out.clusters.centers, shape, opts.learn); });
  out.assignments = detail::staged("inference", out.timings.inference, [&] {
    return infer_assignments(out.dictionary.O_hat, x, opts.coding, opts.threshold);
  });
  out.params = detail::staged("estimation", out.timings.estimation, [&] {
    EstimatedParams p;
    p.priors = estimate_priors(out.assignments.assignments);
    if (opts.mode == ChainType::Markov) p.transitions = estimate_transitions(out.assignments.assignments);
    p.covariance = estimate_covariance(x, out.dictionary.O_hat, out.assignments.assignments);
    return p;
  });
  return out;
}

}  // namespace scfm
