#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mom {

enum class ErrorKind {
  InvalidExtrinsics,
  InvalidIntrinsics,
  PointAtCameraPlane,
  TooFewPoints,
  DegenerateConfiguration,
  RaysNearParallel,
  PointAtInfinity,
  Precondition,
  EmptySubset,
  DuplicateIndex,
  ZeroAreaBox,
  Overflow,
  MissingCamera,
  ShapeMismatch,
  DivisionGuard,
  NonFiniteGradient,
  Divergence,
  UnknownPattern,
  EmptyView,
  Parse,
  UnknownVersion,
  CameraCountMismatch,
  FrameMismatch,
  EmptyInput,
  Config,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidExtrinsics: return "invalid-extrinsics";
    case ErrorKind::InvalidIntrinsics: return "invalid-intrinsics";
    case ErrorKind::PointAtCameraPlane: return "point-at-camera-plane";
    case ErrorKind::TooFewPoints: return "too-few-points";
    case ErrorKind::DegenerateConfiguration: return "degenerate-configuration";
    case ErrorKind::RaysNearParallel: return "rays-near-parallel";
    case ErrorKind::PointAtInfinity: return "point-at-infinity";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::EmptySubset: return "empty-subset";
    case ErrorKind::DuplicateIndex: return "duplicate-index";
    case ErrorKind::ZeroAreaBox: return "zero-area-bbox";
    case ErrorKind::Overflow: return "overflow";
    case ErrorKind::MissingCamera: return "missing-camera";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::DivisionGuard: return "division-guard";
    case ErrorKind::NonFiniteGradient: return "non-finite-gradient";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::UnknownPattern: return "unknown-pattern";
    case ErrorKind::EmptyView: return "empty-view";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::UnknownVersion: return "unknown-version";
    case ErrorKind::CameraCountMismatch: return "camera-count-mismatch";
    case ErrorKind::FrameMismatch: return "frame-mismatch";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::Config: return "config";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace mom
