#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "scfm/error.hpp"

namespace scfm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::MatrixXi;
using Eigen::VectorXd;
using Eigen::VectorXi;

/// Largest number of combination columns any routine will enumerate.
inline constexpr std::uint64_t kMaxCombinations = 10'000'000;

/// Dimensions of a factorial model: observation dimension L, states per
/// chain M (the last state is the shared component) and number of chains K.
struct ModelShape {
  int L = 1;
  int M = 2;
  int K = 1;

  void validate() const {
    detail::require(L >= 1, ErrorCode::InvalidArgument, "L must be >= 1");
    detail::require(M >= 2, ErrorCode::InvalidArgument, "M must be >= 2");
    detail::require(K >= 1, ErrorCode::InvalidArgument, "K must be >= 1");
  }

  /// M^K, saturating at max uint64 on overflow.
  std::uint64_t combinations() const {
    std::uint64_t n = 1;
    for (int k = 0; k < K; ++k) {
      if (n > std::numeric_limits<std::uint64_t>::max() / static_cast<std::uint64_t>(M))
        return std::numeric_limits<std::uint64_t>::max();
      n *= static_cast<std::uint64_t>(M);
    }
    return n;
  }

  /// M^K after checking it against kMaxCombinations.
  Index checked_combinations() const {
    const auto n = combinations();
    if (n > kMaxCombinations)
      throw Error(ErrorCode::CombinatorialOverflow,
                  "M^K = " + (n == std::numeric_limits<std::uint64_t>::max() ? std::string("overflow")
                                                                                : std::to_string(n)) +
                      " exceeds the limit of " + std::to_string(kMaxCombinations));
    return static_cast<Index>(n);
  }

  /// (M-1)^K: combinations with no chain in the shared state.
  Index shared_free_combinations() const {
    Index n = 1;
    for (int k = 0; k < K; ++k) n *= (M - 1);
    return n;
  }

  Index standard_rows() const { return static_cast<Index>(K) * M; }
  Index nonshared_columns() const { return static_cast<Index>(K) * (M - 1); }
  /// K(M-1)+1 = KM-(K-1).
  Index reduced_rows() const { return nonshared_columns() + 1; }

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

enum class Form { Standard, SharedComponent };

inline std::string to_string(Form f) { return f == Form::Standard ? "standard" : "shared"; }

/// Emission dictionary of a shared-component factorial model. Block k holds
/// M columns; its last column is the shared component, identical across
/// blocks. Storage keeps the non-shared columns (block-major, M-1 per block)
/// and the shared vector separately, so the tying holds by construction.
class EmissionMatrix {
 public:
  EmissionMatrix() = default;

  EmissionMatrix(ModelShape shape, MatrixXd nonshared, VectorXd shared)
      : shape_(shape), nonshared_(std::move(nonshared)), shared_(std::move(shared)) {
    shape_.validate();
    detail::require(nonshared_.rows() == shape_.L && shared_.size() == shape_.L &&
                        nonshared_.cols() == shape_.nonshared_columns(),
                    ErrorCode::ShapeMismatch,
                    "emission parts must be L x K(M-1) and length L");
  }

  /// From the L x KM standard layout. Every block's last column must match
  /// block 1's last column to within `tol` (max-abs).
  static EmissionMatrix from_full(ModelShape shape, const MatrixXd& full, double tol = 0.0) {
    shape.validate();
    detail::require(full.rows() == shape.L && full.cols() == shape.standard_rows(),
                    ErrorCode::ShapeMismatch, "full emission matrix must be L x KM");
    const int M = shape.M;
    VectorXd shared = full.col(M - 1);
    MatrixXd nonshared(shape.L, shape.nonshared_columns());
    for (int k = 0; k < shape.K; ++k) {
      const double diff = (full.col(static_cast<Index>(k) * M + M - 1) - shared).cwiseAbs().maxCoeff();
      detail::require(diff <= tol, ErrorCode::InvalidArgument,
                      "block " + std::to_string(k + 1) + " does not share the last column");
      nonshared.middleCols(static_cast<Index>(k) * (M - 1), M - 1) =
          full.middleCols(static_cast<Index>(k) * M, M - 1);
    }
    return {shape, std::move(nonshared), std::move(shared)};
  }

  /// From the L x (K(M-1)+1) layout [O~1 ... O~K s].
  static EmissionMatrix from_reduced(ModelShape shape, const MatrixXd& reduced) {
    shape.validate();
    detail::require(reduced.rows() == shape.L && reduced.cols() == shape.reduced_rows(),
                    ErrorCode::ShapeMismatch, "reduced emission matrix must be L x (K(M-1)+1)");
    return {shape, reduced.leftCols(shape.nonshared_columns()), reduced.col(reduced.cols() - 1)};
  }

  const ModelShape& shape() const { return shape_; }
  const MatrixXd& nonshared() const { return nonshared_; }
  const VectorXd& shared() const { return shared_; }

  /// Column m (0-based, m == M-1 is the shared column) of block k.
  VectorXd column(int k, int m) const {
    if (m == shape_.M - 1) return shared_;
    return nonshared_.col(static_cast<Index>(k) * (shape_.M - 1) + m);
  }

  MatrixXd block(int k) const {
    MatrixXd b(shape_.L, shape_.M);
    b.leftCols(shape_.M - 1) = nonshared_.middleCols(static_cast<Index>(k) * (shape_.M - 1), shape_.M - 1);
    b.col(shape_.M - 1) = shared_;
    return b;
  }

  MatrixXd full() const {
    MatrixXd f(shape_.L, shape_.standard_rows());
    for (int k = 0; k < shape_.K; ++k) f.middleCols(static_cast<Index>(k) * shape_.M, shape_.M) = block(k);
    return f;
  }

  MatrixXd reduced() const {
    MatrixXd r(shape_.L, shape_.reduced_rows());
    r.leftCols(nonshared_.cols()) = nonshared_;
    r.col(r.cols() - 1) = shared_;
    return r;
  }

 private:
  ModelShape shape_{};
  MatrixXd nonshared_;
  VectorXd shared_;
};

namespace detail {

/// Writes the encoded column for one tuple of chain states (0-based, state
/// M-1 is the shared/off state).
inline void encode_tuple(const ModelShape& shape, Form form, std::span<const int> states, auto&& out) {
  const int M = shape.M;
  if (form == Form::Standard) {
    for (Index r = 0; r < shape.standard_rows(); ++r) out(r) = 0;
    for (int k = 0; k < shape.K; ++k) out(static_cast<Index>(k) * M + states[k]) = 1;
  } else {
    for (Index r = 0; r < shape.reduced_rows(); ++r) out(r) = 0;
    int shared_count = 0;
    for (int k = 0; k < shape.K; ++k) {
      if (states[k] == M - 1)
        ++shared_count;
      else
        out(static_cast<Index>(k) * (M - 1) + states[k]) = 1;
    }
    out(shape.reduced_rows() - 1) = shared_count;
  }
}

}  // namespace detail

/// Per-time-step chain states; `states(k, t)` is in [0, M), with M-1 the
/// shared (or "off") state. The encoded matrix R or R~ is derived on demand.
class AssignmentMatrix {
 public:
  AssignmentMatrix() = default;

  AssignmentMatrix(ModelShape shape, Form form, MatrixXi states)
      : shape_(shape), form_(form), states_(std::move(states)) {
    shape_.validate();
    detail::require(states_.rows() == shape_.K, ErrorCode::ShapeMismatch, "states must have K rows");
    detail::require(states_.size() == 0 || (states_.minCoeff() >= 0 && states_.maxCoeff() < shape_.M),
                    ErrorCode::InvalidArgument, "chain states must lie in [0, M)");
  }

  /// Parses an encoded matrix, validating the structural invariants of `form`.
  static AssignmentMatrix from_encoded(ModelShape shape, Form form, const MatrixXd& enc) {
    shape.validate();
    const int M = shape.M;
    const Index rows = form == Form::Standard ? shape.standard_rows() : shape.reduced_rows();
    detail::require(enc.rows() == rows, ErrorCode::ShapeMismatch,
                    "encoded assignment matrix has " + std::to_string(enc.rows()) + " rows, expected " +
                        std::to_string(rows));
    const Index width = form == Form::Standard ? M : M - 1;
    MatrixXi states(shape.K, enc.cols());
    for (Index t = 0; t < enc.cols(); ++t) {
      int shared_count = 0;
      for (int k = 0; k < shape.K; ++k) {
        int active = -1;
        for (Index m = 0; m < width; ++m) {
          const double v = enc(k * width + m, t);
          detail::require(v == 0.0 || v == 1.0, ErrorCode::InvalidArgument,
                          "assignment entries must be 0 or 1 at column " + std::to_string(t));
          if (v == 1.0) {
            detail::require(active < 0, ErrorCode::InvalidArgument,
                            "more than one active state in a chain at column " + std::to_string(t));
            active = static_cast<int>(m);
          }
        }
        if (form == Form::Standard) {
          detail::require(active >= 0, ErrorCode::InvalidArgument,
                          "standard columns need exactly one active state per chain");
          states(k, t) = active;
        } else {
          states(k, t) = active < 0 ? M - 1 : active;
          if (active < 0) ++shared_count;
        }
      }
      if (form == Form::SharedComponent)
        detail::require(enc(rows - 1, t) == shared_count, ErrorCode::InvalidArgument,
                        "counting row mismatch at column " + std::to_string(t));
    }
    return {shape, form, std::move(states)};
  }

  const ModelShape& shape() const { return shape_; }
  Form form() const { return form_; }
  Index T() const { return states_.cols(); }
  const MatrixXi& states() const { return states_; }
  int state(int k, Index t) const { return states_(k, t); }

  AssignmentMatrix as(Form form) const { return {shape_, form, states_}; }

  MatrixXd encoded() const {
    const Index rows = form_ == Form::Standard ? shape_.standard_rows() : shape_.reduced_rows();
    MatrixXd out(rows, T());
    std::vector<int> tuple(static_cast<std::size_t>(shape_.K));
    for (Index t = 0; t < T(); ++t) {
      for (int k = 0; k < shape_.K; ++k) tuple[static_cast<std::size_t>(k)] = states_(k, t);
      auto col = out.col(t);
      detail::encode_tuple(shape_, form_, tuple, [&](Index r) -> double& { return col(r); });
    }
    return out;
  }

 private:
  ModelShape shape_{};
  Form form_ = Form::SharedComponent;
  MatrixXi states_;
};

}  // namespace scfm
