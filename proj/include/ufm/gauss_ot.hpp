#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "ufm/common.hpp"
#include "ufm/gaussian.hpp"

namespace ufm {

/// Symmetric PSD square root via eigendecomposition.
///
/// Eigenvalues below -1e-7 * |S| are rejected as NotPSD; smaller negatives
/// are treated as round-off and clamped to the PSD floor.
template <int N>
Eigen::Matrix<double, N, N> psd_sqrt(const Eigen::Matrix<double, N, N>& s) {
  using Mat = Eigen::Matrix<double, N, N>;
  const double scale = s.norm();
  if ((s - s.transpose()).norm() > 1e-9 * std::max(1.0, scale)) {
    throw Error(ErrorCode::NotPSD, "psd_sqrt: matrix is not symmetric");
  }
  if (!s.allFinite()) throw Error(ErrorCode::NotPSD, "psd_sqrt: non-finite entries");
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (s + s.transpose()));
  auto evals = es.eigenvalues();
  for (int i = 0; i < evals.size(); ++i) {
    if (evals[i] < -1e-7 * scale) throw Error(ErrorCode::NotPSD, "psd_sqrt: negative eigenvalue");
    if (evals[i] < 0.0) evals[i] = kPsdFloor;
  }
  const Mat& v = es.eigenvectors();
  Mat r = v * evals.cwiseSqrt().asDiagonal() * v.transpose();
  return 0.5 * (r + r.transpose());
}

namespace detail {

struct SqrtPair {
  Mat3 sqrt;
  Mat3 inv_sqrt;
};

inline SqrtPair sqrt_and_inverse(const Mat3& s) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (s + s.transpose()));
  Vec3 evals = es.eigenvalues();
  if (evals.minCoeff() < -1e-7 * std::max(1e-300, s.norm())) {
    throw Error(ErrorCode::NotPSD, "negative eigenvalue in covariance");
  }
  evals = evals.cwiseMax(kPsdFloor);
  const Mat3& v = es.eigenvectors();
  SqrtPair out;
  out.sqrt = v * evals.cwiseSqrt().asDiagonal() * v.transpose();
  out.inv_sqrt = v * evals.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
  if (!out.inv_sqrt.allFinite()) {
    throw Error(ErrorCode::SingularCovariance, "covariance inverse square root is not finite");
  }
  return out;
}

inline double clamp_w2(double value, double scale) {
  if (value >= 0.0) return value;
  if (value >= -1e-10 * std::max(1.0, scale)) return 0.0;
  throw Error(ErrorCode::InternalError, "squared Wasserstein distance is negative");
}

}  // namespace detail

/// Squared 2-Wasserstein distance between the geometric parts of two Gaussians.
inline double w2_squared(const Gaussian3& a, const Gaussian3& b) {
  const Mat3 sa = psd_sqrt<3>(a.cov);
  const Mat3 q = sa * b.cov * sa;
  const Mat3 qs = psd_sqrt<3>(0.5 * (q + q.transpose()));
  const double tr = a.cov.trace() + b.cov.trace();
  const double value = (a.mean - b.mean).squaredNorm() + tr - 2.0 * qs.trace();
  return detail::clamp_w2(value, tr);
}

struct GaussianGeometry {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
};

/// Point at fraction `lambda` along the optimal-transport geodesic from a to b.
inline GaussianGeometry geodesic_interpolate(const Gaussian3& a, const Gaussian3& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error(ErrorCode::ConfigError, "geodesic_interpolate: lambda outside [0, 1]");
  }
  GaussianGeometry out;
  out.mean = (1.0 - lambda) * a.mean + lambda * b.mean;
  if (lambda == 0.0) {
    out.cov = a.cov;
    return out;
  }
  const detail::SqrtPair sa = detail::sqrt_and_inverse(a.cov);
  const Mat3 q = sa.sqrt * b.cov * sa.sqrt;
  const Mat3 z = sa.inv_sqrt * psd_sqrt<3>(0.5 * (q + q.transpose())) * sa.inv_sqrt;
  const Mat3 step = (1.0 - lambda) * Mat3::Identity() + lambda * 0.5 * (z + z.transpose());
  const Mat3 cov = step * a.cov * step.transpose();
  if (!cov.allFinite()) throw Error(ErrorCode::SingularCovariance, "geodesic covariance not finite");
  out.cov = floor_eigenvalues<3>(cov, kPsdFloor);
  return out;
}

/// Closed-form barycenter of two equally weighted Gaussians (geodesic midpoint).
inline GaussianGeometry barycenter_two(const Gaussian3& a, const Gaussian3& b) {
  return geodesic_interpolate(a, b, 0.5);
}

struct BarycenterOptions {
  double tol = -1.0;  // <= 0 selects 1e-8 * tr(weighted arithmetic covariance)
  int max_iter = 100;
};

struct BarycenterResult {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
  bool converged = false;
  int iterations = 0;
};

/// Weighted Wasserstein-Bures barycenter by the standard covariance fixed-point
/// iteration, started from the weighted arithmetic covariance mean.
inline BarycenterResult barycenter_n(std::span<const Gaussian3> gs, std::span<const double> weights,
                                     const BarycenterOptions& opts = {}) {
  if (gs.empty()) throw Error(ErrorCode::TooFewViews, "barycenter of an empty set");
  if (weights.size() != gs.size()) throw Error(ErrorCode::ShapeMismatch, "weights size differs");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error(ErrorCode::ConfigError, "negative barycenter weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw Error(ErrorCode::ConfigError, "weights must sum to 1");

  BarycenterResult r;
  r.mean.setZero();
  Mat3 cov = Mat3::Zero();
  for (std::size_t j = 0; j < gs.size(); ++j) {
    r.mean += weights[j] * gs[j].mean;
    cov += weights[j] * gs[j].cov;
  }
  cov = 0.5 * (cov + cov.transpose());
  const double tol = opts.tol > 0.0 ? opts.tol : 1e-8 * std::max(cov.trace(), 1e-300);

  for (int it = 1; it <= opts.max_iter; ++it) {
    const detail::SqrtPair s = detail::sqrt_and_inverse(cov);
    Mat3 t = Mat3::Zero();
    for (std::size_t j = 0; j < gs.size(); ++j) {
      if (weights[j] == 0.0) continue;
      const Mat3 inner = s.sqrt * gs[j].cov * s.sqrt;
      t += weights[j] * psd_sqrt<3>(0.5 * (inner + inner.transpose()));
    }
    Mat3 next = s.inv_sqrt * t * t * s.inv_sqrt;
    next = 0.5 * (next + next.transpose());
    const double change = (next - cov).norm();
    cov = next;
    r.iterations = it;
    if (change <= tol) {
      r.converged = true;
      break;
    }
  }
  r.cov = floor_eigenvalues<3>(cov, kPsdFloor);
  return r;
}

struct WassersteinVariance {
  double value = 0.0;
  bool converged = true;
};

/// Mean squared W2 distance from each Gaussian to their uniform barycenter.
inline WassersteinVariance wasserstein_variance(std::span<const Gaussian3> gs,
                                                const BarycenterOptions& opts = {}) {
  if (gs.empty()) throw Error(ErrorCode::TooFewViews, "Wasserstein variance of an empty set");
  if (gs.size() == 1) return {0.0, true};
  const std::vector<double> w(gs.size(), 1.0 / static_cast<double>(gs.size()));
  const BarycenterResult bary = barycenter_n(gs, w, opts);
  const Gaussian3 center{bary.mean, bary.cov, 1.0, 0.0};
  double sum = 0.0;
  for (const Gaussian3& g : gs) sum += w2_squared(center, g);
  return {sum / static_cast<double>(gs.size()), bary.converged};
}

/// Bhattacharyya coefficient between two image-plane Gaussians, in (0, 1].
inline double bhattacharyya_2d(const Gaussian2& a, const Gaussian2& b) {
  const Mat2 avg = 0.5 * (a.cov + b.cov);
  const double det_avg = avg.determinant();
  const double det_a = a.cov.determinant();
  const double det_b = b.cov.determinant();
  if (!(det_avg > 0.0 && det_a > 0.0 && det_b > 0.0) || !std::isfinite(det_avg)) {
    throw Error(ErrorCode::SingularCovariance, "bhattacharyya_2d: singular covariance");
  }
  const Vec2 d = a.mean - b.mean;
  const double maha = d.dot(avg.inverse() * d);
  const double log_term = 0.5 * std::log(det_avg / std::sqrt(det_a * det_b));
  return std::min(1.0, std::exp(-0.125 * maha - std::max(0.0, log_term)));
}

/// Multivariate normal density of the Gaussian's geometry at x.
inline double gaussian_density(const Vec3& x, const Gaussian3& g) {
  const Eigen::LLT<Mat3> llt(g.cov);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularCovariance, "gaussian_density: covariance not positive definite");
  }
  const Mat3 l = llt.matrixL();
  const Vec3 y = llt.matrixL().solve(x - g.mean);
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const double log_norm = -1.5 * std::log(2.0 * std::numbers::pi) - 0.5 * log_det;
  return std::exp(log_norm - 0.5 * y.squaredNorm());
}

}  // namespace ufm
