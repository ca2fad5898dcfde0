#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "scfm/error.hpp"
#include "scfm/lasso.hpp"
#include "scfm/types.hpp"

namespace scfm {

// Emission learning from the matrix of all M^K noiseless observation values
// by sorting pairwise correlations: the shared component is the column whose
// smallest (M-1)^K correlations sum lowest, the columns with one non-shared
// component sit just below the top of its sorted correlation row, and the
// shared-free sums at the bottom fix the grouping into chains.

struct CorrelationProfile {
  /// Gram matrix of the columns of Xc.
  MatrixXd C;
  /// C with every row sorted ascending.
  MatrixXd C_sorted;
  /// order[i][p] is the column of Xc at sorted position p of row i
  /// (stable: ties keep the lower column index first).
  std::vector<std::vector<Index>> order;
};

inline CorrelationProfile correlation_matrix(const MatrixXd& xc, const ModelShape& shape) {
  shape.validate();
  const Index n = shape.checked_combinations();
  detail::require(xc.rows() == shape.L && xc.cols() == n, ErrorCode::ShapeMismatch,
                  "Xc must be L x M^K (" + std::to_string(shape.L) + " x " + std::to_string(n) + "), got " +
                      std::to_string(xc.rows()) + " x " + std::to_string(xc.cols()));
  CorrelationProfile p;
  p.C.resize(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i; j < n; ++j) p.C(i, j) = p.C(j, i) = xc.col(i).dot(xc.col(j));
  p.C_sorted.resize(n, n);
  p.order.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto& ord = p.order[static_cast<std::size_t>(i)];
    ord.resize(static_cast<std::size_t>(n));
    std::iota(ord.begin(), ord.end(), Index{0});
    std::stable_sort(ord.begin(), ord.end(), [&](Index a, Index b) { return p.C(i, a) < p.C(i, b); });
    for (Index q = 0; q < n; ++q) p.C_sorted(i, q) = p.C(i, ord[static_cast<std::size_t>(q)]);
  }
  return p;
}

struct SharedLocation {
  Index i_star = -1;
  VectorXd s_hat;
  /// Sum of the (M-1)^K smallest correlations of each row.
  VectorXd scores;
  /// Second-lowest score minus the lowest.
  double tie_margin = 0.0;
  bool ambiguous = false;
};

inline SharedLocation locate_shared(const CorrelationProfile& p, const MatrixXd& xc, const ModelShape& shape,
                                    double tie_tol = 1e-9) {
  if (shape.M == 2)
    throw Error(ErrorCode::UnsupportedM2,
                "the shared component is not identifiable from sorted correlations when M = 2");
  const Index n = p.C.rows();
  detail::require(n == shape.checked_combinations() && xc.cols() == n, ErrorCode::ShapeMismatch,
                  "profile does not match M^K");
  const Index q = shape.shared_free_combinations();
  SharedLocation loc;
  loc.scores = p.C_sorted.leftCols(q).rowwise().sum();
  loc.i_star = 0;
  for (Index i = 1; i < n; ++i)
    if (loc.scores(i) < loc.scores(loc.i_star)) loc.i_star = i;
  double second = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i)
    if (i != loc.i_star) second = std::min(second, loc.scores(i));
  loc.tie_margin = n > 1 ? second - loc.scores(loc.i_star) : std::numeric_limits<double>::infinity();
  const double scale = std::max(1.0, p.C.cwiseAbs().maxCoeff());
  loc.ambiguous = loc.tie_margin <= tie_tol * scale;
  loc.s_hat = xc.col(loc.i_star) / static_cast<double>(shape.K);
  return loc;
}

struct ExtractedComponents {
  /// L x (M-1)K: single-component columns with (K-1) s_hat removed.
  MatrixXd W_hat;
  /// L x (M-1)^K: shared-free combination columns.
  MatrixXd Y_hat;
  std::vector<Index> B1;
  std::vector<Index> BK;
  /// Sorted positions (0-based) of B1 / BK in the row of i*.
  std::vector<Index> B1_positions;
  std::vector<Index> BK_positions;
  /// v[top] - v[top-1]: self-correlation above the B1 block.
  double top_gap = 0.0;
  /// Gap between the lowest B1 entry and the entry just below it.
  double b1_gap = 0.0;
  /// Gap between the first entry above BK and the largest BK entry.
  double bk_gap = 0.0;
};

inline ExtractedComponents extract_components(const CorrelationProfile& p, const MatrixXd& xc,
                                              const SharedLocation& loc, const ModelShape& shape) {
  const Index n = p.C.rows();
  detail::require(xc.cols() == n && loc.i_star >= 0 && loc.i_star < n, ErrorCode::ShapeMismatch,
                  "extract_components: inconsistent inputs");
  const auto& ord = p.order[static_cast<std::size_t>(loc.i_star)];
  const VectorXd v = p.C_sorted.row(loc.i_star).transpose();
  const Index nb1 = shape.nonshared_columns();
  const Index nbk = shape.shared_free_combinations();
  ExtractedComponents out;
  // The top entry is the self-correlation <Ks, Ks>; B1 is the block below it.
  const Index b1_start = n - 1 - nb1;
  for (Index q = b1_start; q < n - 1; ++q) {
    out.B1_positions.push_back(q);
    out.B1.push_back(ord[static_cast<std::size_t>(q)]);
  }
  for (Index q = 0; q < nbk; ++q) {
    out.BK_positions.push_back(q);
    out.BK.push_back(ord[static_cast<std::size_t>(q)]);
  }
  if (shape.K >= 2)
    for (Index a : out.B1)
      if (std::find(out.BK.begin(), out.BK.end(), a) != out.BK.end())
        throw Error(ErrorCode::IndexCollision, "column " + std::to_string(a) + " selected for both B1 and BK");

  out.W_hat.resize(xc.rows(), nb1);
  for (Index j = 0; j < nb1; ++j)
    out.W_hat.col(j) = xc.col(out.B1[static_cast<std::size_t>(j)]) - (shape.K - 1) * loc.s_hat;
  out.Y_hat.resize(xc.rows(), nbk);
  for (Index j = 0; j < nbk; ++j) out.Y_hat.col(j) = xc.col(out.BK[static_cast<std::size_t>(j)]);

  out.top_gap = n >= 2 ? v(n - 1) - v(n - 2) : 0.0;
  out.b1_gap = b1_start >= 1 ? v(b1_start) - v(b1_start - 1) : std::numeric_limits<double>::infinity();
  out.bk_gap = nbk < n ? v(nbk) - v(nbk - 1) : std::numeric_limits<double>::infinity();
  return out;
}

struct GroupingResult {
  /// Raw codes, (M-1)K x (M-1)^K.
  MatrixXd H;
  /// H thresholded to {0, 1}.
  MatrixXi H_binary;
  /// groups[g] lists W_hat column indices of chain g, ascending.
  std::vector<std::vector<Index>> groups;
  EmissionMatrix O_hat;
  int nonconverged_columns = 0;
};

namespace detail {

/// Partitions n items into k groups of `size` such that no group contains a
/// conflicting pair. Stops after finding two partitions (groups are
/// unlabelled, so each partition is found once).
inline int partition_without_conflicts(Index n, int k, Index size, const MatrixXi& conflict,
                                       std::vector<int>& first_solution) {
  std::vector<int> group(static_cast<std::size_t>(n), -1);
  std::vector<Index> fill(static_cast<std::size_t>(k), 0);
  int found = 0;
  auto rec = [&](auto&& self, Index item, int opened) -> void {
    if (found >= 2) return;
    if (item == n) {
      if (opened == k) {
        if (found == 0) first_solution = group;
        ++found;
      }
      return;
    }
    const int limit = std::min(opened + 1, k);
    for (int g = 0; g < limit; ++g) {
      if (fill[static_cast<std::size_t>(g)] >= size) continue;
      bool ok = true;
      for (Index j = 0; j < item && ok; ++j)
        if (group[static_cast<std::size_t>(j)] == g && conflict(item, j)) ok = false;
      if (!ok) continue;
      group[static_cast<std::size_t>(item)] = g;
      ++fill[static_cast<std::size_t>(g)];
      self(self, item + 1, std::max(opened, g + 1));
      --fill[static_cast<std::size_t>(g)];
      group[static_cast<std::size_t>(item)] = -1;
    }
  };
  rec(rec, 0, 0);
  return found;
}

}  // namespace detail

/// Solves Y ~ W H column by column with the sparse solver, binarises H and
/// groups the columns of W: two columns co-occurring in a column of H belong
/// to different chains. The partition into K groups of M-1 columns must be
/// unique.
inline GroupingResult group_components(const MatrixXd& w_hat, const MatrixXd& y_hat, const VectorXd& s_hat,
                                       const ModelShape& shape, const CodingOptions& coding = {},
                                       double threshold = 0.5) {
  const Index n = shape.nonshared_columns();
  detail::require(w_hat.cols() == n && y_hat.cols() == shape.shared_free_combinations() &&
                      w_hat.rows() == y_hat.rows() && s_hat.size() == w_hat.rows(),
                  ErrorCode::ShapeMismatch, "group_components: W must have (M-1)K and Y (M-1)^K columns");
  GroupingResult out;
  out.H.resize(n, y_hat.cols());
  for (Index t = 0; t < y_hat.cols(); ++t) {
    auto r = coding.solve(y_hat.col(t), w_hat);
    out.H.col(t) = r.h;
    out.nonconverged_columns += !r.converged;
  }
  out.H_binary = (out.H.array() >= threshold).cast<int>();

  MatrixXi conflict = MatrixXi::Zero(n, n);
  for (Index t = 0; t < out.H_binary.cols(); ++t)
    for (Index a = 0; a < n; ++a)
      for (Index b = a + 1; b < n; ++b)
        if (out.H_binary(a, t) && out.H_binary(b, t)) conflict(a, b) = conflict(b, a) = 1;

  std::vector<int> assignment;
  const int found = detail::partition_without_conflicts(n, shape.K, shape.M - 1, conflict, assignment);
  if (found == 0)
    throw Error(ErrorCode::GroupingInconsistent, "no partition into K groups of M-1 non-co-occurring columns");
  if (found > 1)
    throw Error(ErrorCode::GroupingInconsistent,
                "co-occurrence pattern admits several groupings (codes too sparse, lambda too large?)");

  out.groups.assign(static_cast<std::size_t>(shape.K), {});
  for (Index a = 0; a < n; ++a) out.groups[static_cast<std::size_t>(assignment[static_cast<std::size_t>(a)])].push_back(a);
  MatrixXd nonshared(w_hat.rows(), n);
  Index c = 0;
  for (const auto& g : out.groups)
    for (Index a : g) nonshared.col(c++) = w_hat.col(a);
  out.O_hat = EmissionMatrix(shape, std::move(nonshared), s_hat);
  return out;
}

struct LearnOptions {
  CodingOptions coding;
  double threshold = 0.5;
  double tie_tol = 1e-9;
};

struct RecoveredDictionary {
  VectorXd s_hat;
  MatrixXd W_hat;
  MatrixXd Y_hat;
  MatrixXd H_hat;
  MatrixXi H_binary;
  EmissionMatrix O_hat;
  Index i_star = -1;
  std::vector<Index> B1;
  std::vector<Index> BK;
  std::vector<Index> B1_positions;
  std::vector<Index> BK_positions;
  std::vector<std::vector<Index>> groups;
  double tie_margin = 0.0;
  double top_gap = 0.0;
  double b1_gap = 0.0;
  double bk_gap = 0.0;
  std::vector<std::string> warnings;
};

inline RecoveredDictionary learn_emissions(const MatrixXd& xc, const ModelShape& shape, const LearnOptions& opts = {}) {
  shape.validate();
  if (shape.M == 2)
    throw Error(ErrorCode::UnsupportedM2,
                "the shared component is not identifiable from sorted correlations when M = 2");
  const auto prof = correlation_matrix(xc, shape);
  const auto loc = locate_shared(prof, xc, shape, opts.tie_tol);
  auto ext = extract_components(prof, xc, loc, shape);
  auto grp = group_components(ext.W_hat, ext.Y_hat, loc.s_hat, shape, opts.coding, opts.threshold);

  RecoveredDictionary out;
  out.s_hat = loc.s_hat;
  out.i_star = loc.i_star;
  out.tie_margin = loc.tie_margin;
  if (loc.ambiguous)
    out.warnings.push_back("shared-component argmin is tied (margin " + std::to_string(loc.tie_margin) +
                           "); lowest index taken");
  out.W_hat = std::move(ext.W_hat);
  out.Y_hat = std::move(ext.Y_hat);
  out.B1 = std::move(ext.B1);
  out.BK = std::move(ext.BK);
  out.B1_positions = std::move(ext.B1_positions);
  out.BK_positions = std::move(ext.BK_positions);
  out.top_gap = ext.top_gap;
  out.b1_gap = ext.b1_gap;
  out.bk_gap = ext.bk_gap;
  if (out.b1_gap <= 0.0) out.warnings.push_back("B1 block is not separated from lower correlations");
  if (out.top_gap <= 0.0) out.warnings.push_back("self-correlation is tied with a B1 entry");
  out.H_hat = std::move(grp.H);
  out.H_binary = std::move(grp.H_binary);
  out.groups = std::move(grp.groups);
  out.O_hat = std::move(grp.O_hat);
  if (grp.nonconverged_columns > 0)
    out.warnings.push_back(std::to_string(grp.nonconverged_columns) + " grouping solves did not converge");
  return out;
}

}  // namespace scfm
