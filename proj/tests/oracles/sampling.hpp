#pragma once

// Test-side Gaussian sampling and a discrete-OT estimate of W2^2 between two
// Gaussians built on the auction oracle. Nothing here calls ufm's OT code.

#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "oracles/auction.hpp"

namespace oracle {

using V3 = Eigen::Vector3d;
using M3 = Eigen::Matrix3d;

inline M3 spd_sqrt(const M3& m) {
  Eigen::SelfAdjointEigenSolver<M3> es(m);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

/// Random SPD matrix A A^T + floor I with N(0, scale^2) entries in A.
template <typename Rng>
M3 random_spd(Rng& rng, double scale, double floor) {
  std::normal_distribution<double> n01;
  M3 a;
  for (int i = 0; i < 9; ++i) a(i) = scale * n01(rng);
  return a * a.transpose() + floor * M3::Identity();
}

/// n samples whose empirical mean and (population) covariance equal mean/cov exactly.
template <typename Rng>
std::vector<V3> moment_matched_samples(Rng& rng, const V3& mean, const M3& cov, int n) {
  std::normal_distribution<double> n01;
  std::vector<V3> z(n);
  V3 zbar = V3::Zero();
  for (V3& v : z) {
    v = V3(n01(rng), n01(rng), n01(rng));
    zbar += v;
  }
  zbar /= n;
  M3 c = M3::Zero();
  for (V3& v : z) {
    v -= zbar;
    c += v * v.transpose();
  }
  c /= n;
  const M3 whiten = Eigen::LLT<M3>(c).matrixL().solve(M3::Identity());
  const M3 color = Eigen::LLT<M3>(cov).matrixL();
  for (V3& v : z) v = mean + color * (whiten * v);
  return z;
}

/// Discrete OT cost between moment-matched clouds of two Gaussians. Prices are
/// warm-started from the affine map between the clouds' moments, which only
/// speeds up the auction; the result is eps-optimal for any start.
template <typename Rng>
double sampled_w2_squared(Rng& rng, const V3& ma, const M3& ca, const V3& mb, const M3& cb, int n,
                          double rel_eps) {
  const std::vector<V3> xs = moment_matched_samples(rng, ma, ca, n);
  const std::vector<V3> ys = moment_matched_samples(rng, mb, cb, n);
  const M3 ra = spd_sqrt(ca);
  const M3 ra_inv = ra.inverse();
  const M3 map = ra_inv * spd_sqrt(ra * cb * ra) * ra_inv;
  const M3 map_inv = map.inverse();
  AuctionOptions opt;
  opt.metric = map_inv;
  opt.prices.resize(n);
  for (int j = 0; j < n; ++j) {
    const V3 d = ys[j] - mb;
    opt.prices[j] = 2.0 * (ma.dot(d) + 0.5 * d.dot(map_inv * d)) - ys[j].squaredNorm();
  }
  const double scale = (ma - mb).squaredNorm() + ca.trace() + cb.trace();
  opt.eps_final = rel_eps * scale;
  opt.eps_start = 3.0 * opt.eps_final;
  return discrete_w2_squared(xs, ys, opt);
}

}  // namespace oracle
