#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scfm {

enum class ErrorCode {
  InvalidArgument,
  ShapeMismatch,
  CombinatorialOverflow,
  NumericalFailure,
  NoWitness,
  IncoherenceUnsatisfiable,
  InsufficientData,
  DegenerateClusters,
  UnsupportedM2,
  IndexCollision,
  GroupingInconsistent,
  KTooLarge,
  PreconditionViolation,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::CombinatorialOverflow: return "CombinatorialOverflow";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::NoWitness: return "NoWitness";
    case ErrorCode::IncoherenceUnsatisfiable: return "IncoherenceUnsatisfiable";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::DegenerateClusters: return "DegenerateClusters";
    case ErrorCode::UnsupportedM2: return "UnsupportedM2";
    case ErrorCode::IndexCollision: return "IndexCollision";
    case ErrorCode::GroupingInconsistent: return "GroupingInconsistent";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::PreconditionViolation: return "PreconditionViolation";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Library exception. `stage()` is empty unless the error was raised inside
/// the end-to-end pipeline, in which case it names the failing stage.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string stage = {})
      : std::runtime_error(format(code, message, stage)),
        code_(code),
        detail_(message),
        stage_(std::move(stage)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  const std::string& stage() const noexcept { return stage_; }

  Error with_stage(std::string stage) const { return Error(code_, detail_, std::move(stage)); }

 private:
  static std::string format(ErrorCode code, const std::string& message, const std::string& stage) {
    std::string out(to_string(code));
    if (!stage.empty()) out += " [stage=" + stage + "]";
    out += ": " + message;
    return out;
  }

  ErrorCode code_;
  std::string detail_;
  std::string stage_;
};

namespace detail {

inline void require(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) throw Error(code, message);
}

}  // namespace detail
}  // namespace scfm
