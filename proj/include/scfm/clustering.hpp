#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "scfm/error.hpp"
#include "scfm/rng.hpp"
#include "scfm/types.hpp"

namespace scfm {

struct ClusterOptions {
  int restarts = 20;
  int max_iters = 100;
  std::uint64_t seed = 0;
  /// Centers closer than this (relative to the data scale) count as one.
  double duplicate_tol = 1e-9;
  /// Concentration constants c reported by the diagnostic.
  std::vector<double> concentration_c{0.5, 1.0};
  Index max_concentration_pairs = 200'000;
};

struct ConcentrationEntry {
  double c = 0.0;
  /// 2 exp(-L c^2 / 24).
  double bound = 0.0;
  /// Fraction of sampled pairs with | ||e_i - e_j||^2 - 2 sigma^2 L | > c 2 sigma^2 L.
  double empirical_fraction = 0.0;
  Index pairs = 0;
};

struct ClusterDiagnostics {
  double min_center_separation = 0.0;
  double sigma_hat = 0.0;
  /// sqrt(2L) * sigma_hat.
  double noise_shell_radius = 0.0;
  /// min_center_separation / (sigma_hat sqrt(L)); infinite when sigma_hat = 0.
  double separation_ratio = 0.0;
  bool concentration_ok = false;
  double min_mixing_weight = 0.0;
  /// Smallest occupied fraction below 0.25 / M^K.
  bool mixing_weight_warning = false;
  std::vector<ConcentrationEntry> concentration;
};

struct ClusteredCombinations {
  MatrixXd centers;
  std::vector<Index> counts;
  std::vector<int> labels;
  /// Per center: empty, or a duplicate of an earlier center.
  std::vector<bool> missing;
  int missing_count = 0;
  double distortion = 0.0;
  int best_restart = 0;
  /// Largest relative increase of the within-cluster sum of squares between
  /// consecutive Lloyd iterations over all restarts (0 when monotone).
  double max_distortion_increase = 0.0;
  ClusterDiagnostics quality;

  bool degenerate() const { return missing_count > 0; }
};

namespace detail {

struct KMeansRun {
  MatrixXd centers;
  std::vector<int> labels;
  double distortion = 0.0;
  double max_increase = 0.0;
};

inline double assign_labels(const MatrixXd& x, const MatrixXd& centers, std::vector<int>& labels) {
  double sse = 0.0;
  for (Index t = 0; t < x.cols(); ++t) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < centers.cols(); ++c) {
      const double d = (x.col(t) - centers.col(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    labels[static_cast<std::size_t>(t)] = best;
    sse += best_d;
  }
  return sse;
}

inline KMeansRun kmeans_once(const MatrixXd& x, Index k, int max_iters, Rng& rng) {
  const Index T = x.cols();
  KMeansRun run;
  run.centers.resize(x.rows(), k);

  // Greedy max-min seeding from a random first point.
  std::uniform_int_distribution<Index> pick(0, T - 1);
  Index first = pick(rng);
  run.centers.col(0) = x.col(first);
  VectorXd mind(T);
  for (Index t = 0; t < T; ++t) mind(t) = (x.col(t) - run.centers.col(0)).squaredNorm();
  for (Index c = 1; c < k; ++c) {
    Index far = 0;
    for (Index t = 1; t < T; ++t)
      if (mind(t) > mind(far)) far = t;
    run.centers.col(c) = x.col(far);
    for (Index t = 0; t < T; ++t) mind(t) = std::min(mind(t), (x.col(t) - run.centers.col(c)).squaredNorm());
  }

  run.labels.assign(static_cast<std::size_t>(T), -1);
  std::vector<int> prev;
  double prev_sse = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iters; ++it) {
    prev = run.labels;
    assign_labels(x, run.centers, run.labels);
    MatrixXd sums = MatrixXd::Zero(x.rows(), k);
    VectorXd cnt = VectorXd::Zero(k);
    for (Index t = 0; t < T; ++t) {
      sums.col(run.labels[static_cast<std::size_t>(t)]) += x.col(t);
      cnt(run.labels[static_cast<std::size_t>(t)]) += 1.0;
    }
    for (Index c = 0; c < k; ++c)
      if (cnt(c) > 0) run.centers.col(c) = sums.col(c) / cnt(c);
    double sse = 0.0;
    for (Index t = 0; t < T; ++t) sse += (x.col(t) - run.centers.col(run.labels[static_cast<std::size_t>(t)])).squaredNorm();
    if (std::isfinite(prev_sse) && sse > prev_sse)
      run.max_increase = std::max(run.max_increase, (sse - prev_sse) / std::max(prev_sse, 1e-300));
    prev_sse = sse;
    run.distortion = sse;
    if (run.labels == prev) break;
  }
  return run;
}

}  // namespace detail

/// Nearest-center residual concentration: for sampled observation pairs,
/// how often the squared norm of the residual difference strays from
/// 2 sigma^2 L by more than c 2 sigma^2 L, next to the Gaussian bound.
inline std::vector<ConcentrationEntry> concentration_diagnostic(const MatrixXd& x, const MatrixXd& centers,
                                                                double sigma_hat,
                                                                const std::vector<double>& cs = {0.5, 1.0},
                                                                Index max_pairs = 200'000) {
  detail::require(x.rows() == centers.rows(), ErrorCode::ShapeMismatch, "centers and data dimensions differ");
  const Index T = x.cols();
  const double L = static_cast<double>(x.rows());
  std::vector<int> labels(static_cast<std::size_t>(T));
  if (centers.cols() > 0) detail::assign_labels(x, centers, labels);
  MatrixXd e(x.rows(), T);
  for (Index t = 0; t < T; ++t) e.col(t) = x.col(t) - centers.col(labels[static_cast<std::size_t>(t)]);

  const double expected = 2.0 * sigma_hat * sigma_hat * L;
  const Index total = T * (T - 1) / 2;
  const Index step = total > max_pairs ? (total + max_pairs - 1) / max_pairs : 1;
  std::vector<ConcentrationEntry> out;
  for (double c : cs) out.push_back({c, 2.0 * std::exp(-L * c * c / 24.0), 0.0, 0});
  std::vector<Index> exceed(cs.size(), 0);
  Index used = 0, counter = 0;
  for (Index i = 0; i < T; ++i)
    for (Index j = i + 1; j < T; ++j, ++counter) {
      if (counter % step) continue;
      ++used;
      const double dev = std::abs((e.col(i) - e.col(j)).squaredNorm() - expected);
      for (std::size_t q = 0; q < cs.size(); ++q) exceed[q] += dev > cs[q] * expected;
    }
  for (std::size_t q = 0; q < cs.size(); ++q) {
    out[q].pairs = used;
    out[q].empirical_fraction = used ? static_cast<double>(exceed[q]) / static_cast<double>(used) : 0.0;
  }
  return out;
}

/// Estimates the M^K distinct noiseless observation values by k-means with
/// greedy max-min seeding and `restarts` restarts (lowest distortion wins,
/// ties to the lowest restart index).
inline ClusteredCombinations estimate_combinations(const MatrixXd& x, const ModelShape& shape,
                                                   const ClusterOptions& opts = {}) {
  shape.validate();
  detail::require(x.rows() == shape.L, ErrorCode::ShapeMismatch, "observations must have L rows");
  detail::require(opts.restarts >= 1 && opts.max_iters >= 1, ErrorCode::InvalidArgument,
                  "restarts and max_iters must be >= 1");
  const Index k = shape.checked_combinations();
  const Index T = x.cols();
  if (T < k)
    throw Error(ErrorCode::InsufficientData,
                "T = " + std::to_string(T) + " observations cannot populate M^K = " + std::to_string(k) + " clusters");

  ClusteredCombinations out;
  detail::KMeansRun best;
  bool have = false;
  for (int r = 0; r < opts.restarts; ++r) {
    Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(r)));
    auto run = detail::kmeans_once(x, k, opts.max_iters, rng);
    out.max_distortion_increase = std::max(out.max_distortion_increase, run.max_increase);
    if (!have || run.distortion < best.distortion) {
      best = std::move(run);
      out.best_restart = r;
      have = true;
    }
  }
  out.centers = std::move(best.centers);
  out.labels = std::move(best.labels);
  out.distortion = best.distortion;
  out.counts.assign(static_cast<std::size_t>(k), 0);
  for (int l : out.labels) ++out.counts[static_cast<std::size_t>(l)];

  const double scale = std::max(1.0, x.cwiseAbs().maxCoeff());
  out.missing.assign(static_cast<std::size_t>(k), false);
  for (Index c = 0; c < k; ++c) {
    bool miss = out.counts[static_cast<std::size_t>(c)] == 0;
    for (Index p = 0; p < c && !miss; ++p)
      if (!out.missing[static_cast<std::size_t>(p)] &&
          (out.centers.col(c) - out.centers.col(p)).norm() <= opts.duplicate_tol * scale)
        miss = true;
    out.missing[static_cast<std::size_t>(c)] = miss;
    out.missing_count += miss;
  }

  auto& q = out.quality;
  const double L = static_cast<double>(shape.L);
  q.sigma_hat = std::sqrt(out.distortion / (static_cast<double>(T) * L));
  q.noise_shell_radius = std::sqrt(2.0 * L) * q.sigma_hat;
  q.min_center_separation = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < k; ++i)
    for (Index j = i + 1; j < k; ++j)
      if (!out.missing[static_cast<std::size_t>(i)] && !out.missing[static_cast<std::size_t>(j)])
        q.min_center_separation = std::min(q.min_center_separation, (out.centers.col(i) - out.centers.col(j)).norm());
  if (!std::isfinite(q.min_center_separation)) q.min_center_separation = 0.0;
  const double noise_scale = q.sigma_hat * std::sqrt(L);
  q.separation_ratio = noise_scale > 0.0 ? q.min_center_separation / noise_scale
                                         : std::numeric_limits<double>::infinity();
  q.concentration_ok = q.min_center_separation > noise_scale;
  Index min_count = T;
  for (Index c = 0; c < k; ++c)
    if (!out.missing[static_cast<std::size_t>(c)]) min_count = std::min(min_count, out.counts[static_cast<std::size_t>(c)]);
  q.min_mixing_weight = static_cast<double>(min_count) / static_cast<double>(T);
  q.mixing_weight_warning = q.min_mixing_weight < 0.25 / static_cast<double>(k);
  q.concentration = concentration_diagnostic(x, out.centers, q.sigma_hat, opts.concentration_c, opts.max_concentration_pairs);
  return out;
}

/// Centers with the missing ones dropped.
inline MatrixXd present_centers(const ClusteredCombinations& c) {
  MatrixXd out(c.centers.rows(), c.centers.cols() - c.missing_count);
  Index j = 0;
  for (Index i = 0; i < c.centers.cols(); ++i)
    if (!c.missing[static_cast<std::size_t>(i)]) out.col(j++) = c.centers.col(i);
  return out;
}

}  // namespace scfm
