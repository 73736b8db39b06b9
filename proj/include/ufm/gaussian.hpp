#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>

#include <Eigen/Eigenvalues>

#include "ufm/common.hpp"

namespace ufm {

/// Clamp the eigenvalues of a symmetric matrix from below. The input is
/// symmetrized first.
template <int N>
Eigen::Matrix<double, N, N> floor_eigenvalues(const Eigen::Matrix<double, N, N>& m, double floor) {
  using Mat = Eigen::Matrix<double, N, N>;
  const Mat sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es;
  es.computeDirect(sym);
  auto evals = es.eigenvalues();
  if (evals.minCoeff() >= floor) return sym;
  evals = evals.cwiseMax(floor);
  const Mat& v = es.eigenvectors();
  Mat out = v * evals.asDiagonal() * v.transpose();
  return 0.5 * (out + out.transpose());
}

/// Normal of a flat covariance (middle eigenvalue > 4x the smallest), else nullopt.
inline std::optional<Vec3> plane_normal(const Mat3& cov) {
  Eigen::SelfAdjointEigenSolver<Mat3> es;
  es.computeDirect(cov);
  const Vec3 ev = es.eigenvalues();
  if (ev[1] > 4.0 * ev[0] && ev[1] > 1e-8) return Vec3(es.eigenvectors().col(0));
  return std::nullopt;
}

/// Weighted 3D Gaussian with a multiview-disagreement attribute.
struct Gaussian3 {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
  double weight = 1.0;        // unnormalized mass
  double disagreement = 0.0;  // m, meters^2

  /// Builds a Gaussian with a symmetrized covariance floored at `floor`.
  static Gaussian3 make(const Vec3& mean, const Mat3& cov, double weight = 1.0,
                        double disagreement = 0.0, double floor = kPsdFloor) {
    Gaussian3 g;
    g.mean = mean;
    g.cov = floor_eigenvalues<3>(cov, floor);
    g.weight = weight;
    g.disagreement = std::max(0.0, disagreement);
    return g;
  }
};

/// Image-plane Gaussian (pixels, pixels^2) keeping a back-reference to its source.
struct Gaussian2 {
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Identity();
  std::size_t source_index = 0;
};

}  // namespace ufm
