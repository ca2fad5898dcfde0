#pragma once

#include <Eigen/SVD>

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "scfm/error.hpp"
#include "scfm/types.hpp"

namespace scfm {

/// Enumeration of every assignment column a model of `shape` can produce.
/// Column l corresponds to the tuple (m_1, ..., m_K) in lexicographic order,
/// m_1 most significant; state M-1 is the shared/off state.
struct CombinationMatrix {
  ModelShape shape;
  Form form = Form::Standard;
  MatrixXi matrix;

  Index columns() const { return matrix.cols(); }

  std::vector<int> tuple(Index l) const {
    std::vector<int> t(static_cast<std::size_t>(shape.K));
    for (int k = shape.K - 1; k >= 0; --k) {
      t[static_cast<std::size_t>(k)] = static_cast<int>(l % shape.M);
      l /= shape.M;
    }
    return t;
  }

  Index index_of(std::span<const int> tuple) const {
    Index l = 0;
    for (int k = 0; k < shape.K; ++k) l = l * shape.M + tuple[static_cast<std::size_t>(k)];
    return l;
  }

  /// Column of the tuple with every chain in the shared state.
  Index all_shared_index() const { return columns() - 1; }

  /// Number of chains not in the shared state for column l.
  int active_count(Index l) const {
    int n = 0;
    for (int s : tuple(l)) n += (s != shape.M - 1);
    return n;
  }
};

inline CombinationMatrix build_combination_matrix(const ModelShape& shape, Form form) {
  shape.validate();
  const Index n = shape.checked_combinations();
  CombinationMatrix out{shape, form, {}};
  out.matrix.resize(form == Form::Standard ? shape.standard_rows() : shape.reduced_rows(), n);
  for (Index l = 0; l < n; ++l) {
    const auto t = out.tuple(l);
    auto col = out.matrix.col(l);
    detail::encode_tuple(shape, form, t, [&](Index r) -> int& { return col(r); });
  }
  return out;
}

struct RankReport {
  int numerical_rank = 0;
  /// Dimension of the left nullspace, rows(A) - rank.
  int nullspace_dim = 0;
  double tolerance = 0.0;
  std::vector<double> singular_values;
};

/// Rank by singular-value thresholding. `tolerance == 0` selects
/// max(rows, cols) * eps * sigma_max.
inline RankReport numerical_rank(const MatrixXd& a, double tolerance = 0.0) {
  detail::require(a.size() > 0, ErrorCode::InvalidArgument, "numerical_rank needs a nonempty matrix");
  detail::require(tolerance >= 0.0, ErrorCode::InvalidArgument, "tolerance must be >= 0");
  Eigen::JacobiSVD<MatrixXd> svd(a);
  if (svd.info() != Eigen::Success || !svd.singularValues().allFinite())
    throw Error(ErrorCode::NumericalFailure, "SVD did not converge");
  const VectorXd& sv = svd.singularValues();
  RankReport rep;
  rep.singular_values.assign(sv.data(), sv.data() + sv.size());
  rep.tolerance = tolerance > 0.0 ? tolerance
                                  : static_cast<double>(std::max(a.rows(), a.cols())) *
                                        std::numeric_limits<double>::epsilon() * (sv.size() ? sv(0) : 0.0);
  rep.numerical_rank = static_cast<int>((sv.array() > rep.tolerance).count());
  rep.nullspace_dim = static_cast<int>(a.rows()) - rep.numerical_rank;
  return rep;
}

struct IdentifiabilityReport {
  int standard_rank = 0;
  int shared_rank = 0;
  bool standard_identifiable = false;
  bool shared_identifiable = false;
};

inline IdentifiabilityReport verify_identifiability(const ModelShape& shape) {
  const auto std_c = build_combination_matrix(shape, Form::Standard);
  const auto sh_c = build_combination_matrix(shape, Form::SharedComponent);
  IdentifiabilityReport r;
  r.standard_rank = numerical_rank(std_c.matrix.cast<double>()).numerical_rank;
  r.shared_rank = numerical_rank(sh_c.matrix.cast<double>()).numerical_rank;
  r.standard_identifiable = r.standard_rank == shape.standard_rows();
  r.shared_identifiable = r.shared_rank == shape.reduced_rows();
  return r;
}

/// Nonzero alpha with alpha^T R^c = 0: +1 over block 1, -1 over block 2.
inline VectorXi nullspace_witness(const ModelShape& shape) {
  shape.validate();
  if (shape.K < 2) throw Error(ErrorCode::NoWitness, "the left nullspace of R^c is trivial for K = 1");
  VectorXi alpha = VectorXi::Zero(shape.standard_rows());
  alpha.segment(0, shape.M).setConstant(1);
  alpha.segment(shape.M, shape.M).setConstant(-1);
  return alpha;
}

struct IncoherenceViolation {
  enum class Kind { SharedAboveCross, SharedAboveSelf };
  Kind kind;
  /// (chain, state) of the two non-shared columns forming the pair; unused
  /// for SharedAboveSelf.
  int k1 = -1, m1 = -1, k2 = -1, m2 = -1;
  /// (chain, state) of the column whose correlation with s is too large.
  int k3 = -1, m3 = -1;
  double slack = 0.0;
};

struct IncoherenceReport {
  bool holds = false;
  /// True when <s, s> == 0: the shared column has no magnitude.
  bool degenerate_shared = false;
  double worst_margin = std::numeric_limits<double>::infinity();
  std::vector<IncoherenceViolation> violations;
};

/// Checks <mu'', s> <= <mu, mu'> for every non-shared triple and
/// <mu, s> <= <s, s> for every non-shared column. Inequalities are
/// non-strict: zero slack is not a violation.
inline IncoherenceReport incoherence_check(const EmissionMatrix& o) {
  const ModelShape& sh = o.shape();
  const MatrixXd& w = o.nonshared();
  const VectorXd& s = o.shared();
  const Index n = w.cols();
  const int per = sh.M - 1;
  IncoherenceReport rep;

  const VectorXd ws = w.transpose() * s;
  const MatrixXd gram = w.transpose() * w;
  const double ss = s.squaredNorm();
  rep.degenerate_shared = !(ss > 0.0);

  Index worst_ws = 0;
  for (Index i = 0; i < n; ++i)
    if (ws(i) > ws(worst_ws)) worst_ws = i;

  for (Index a = 0; a < n; ++a) {
    for (Index b = a; b < n; ++b) {
      if (n == 0) break;
      const double slack = gram(a, b) - ws(worst_ws);
      rep.worst_margin = std::min(rep.worst_margin, slack);
      if (slack < 0.0) {
        for (Index c = 0; c < n; ++c) {
          const double sc = gram(a, b) - ws(c);
          if (sc < 0.0)
            rep.violations.push_back({IncoherenceViolation::Kind::SharedAboveCross, static_cast<int>(a / per),
                                      static_cast<int>(a % per), static_cast<int>(b / per),
                                      static_cast<int>(b % per), static_cast<int>(c / per),
                                      static_cast<int>(c % per), sc});
        }
      }
    }
  }
  for (Index c = 0; c < n; ++c) {
    const double slack = ss - ws(c);
    rep.worst_margin = std::min(rep.worst_margin, slack);
    if (slack < 0.0)
      rep.violations.push_back({IncoherenceViolation::Kind::SharedAboveSelf, -1, -1, -1, -1,
                                static_cast<int>(c / per), static_cast<int>(c % per), slack});
  }
  rep.holds = rep.violations.empty() && !rep.degenerate_shared;
  return rep;
}

}  // namespace scfm
