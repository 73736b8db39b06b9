#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace ufm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

/// Eigenvalue floor (m^2) applied whenever a Gaussian is constructed.
inline constexpr double kPsdFloor = 1e-9;

/// Near-plane guard for projection (m).
inline constexpr double kDefaultZMin = 1e-3;

enum class ErrorCode {
  NonPositiveDepth,
  BehindCamera,
  NotPSD,
  SingularCovariance,
  NotConverged,
  TooFewViews,
  EmptyFrame,
  ShapeMismatch,
  NoValidPixels,
  MissingIntrinsics,
  PoseCountMismatch,
  CorruptDepthFile,
  NoVisibleGeometry,
  ConfigError,
  ParseError,
  IoError,
  InternalError,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::NotPSD: return "NotPSD";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::TooFewViews: return "TooFewViews";
    case ErrorCode::EmptyFrame: return "EmptyFrame";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NoValidPixels: return "NoValidPixels";
    case ErrorCode::MissingIntrinsics: return "MissingIntrinsics";
    case ErrorCode::PoseCountMismatch: return "PoseCountMismatch";
    case ErrorCode::CorruptDepthFile: return "CorruptDepthFile";
    case ErrorCode::NoVisibleGeometry: return "NoVisibleGeometry";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InternalError: return "InternalError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace ufm
