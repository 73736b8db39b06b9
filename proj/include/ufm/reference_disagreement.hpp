#pragma once

// Reference multiview-disagreement measures under perfect correspondence, and
// a small synthetic harness reproducing the five error/disagreement regimes
// (A: accurate, B: inconsistent, C: consistently wrong, D: mixed, E: accurate
// but inconsistently segmented).

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ufm/common.hpp"
#include "ufm/gauss_ot.hpp"
#include "ufm/gaussian.hpp"

namespace ufm {

/// Trace of the unbiased sample covariance of per-view point estimates.
inline double pointwise_mvd(std::span<const Vec3> points) {
  if (points.size() < 2) throw Error(ErrorCode::TooFewViews, "pointwise_mvd needs >= 2 views");
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  double sum = 0.0;
  for (const Vec3& p : points) sum += (p - mean).squaredNorm();
  return sum / static_cast<double>(points.size() - 1);
}

/// Exact Gaussian multiview disagreement (Wasserstein variance).
inline WassersteinVariance gaussian_mvd_exact(std::span<const Gaussian3> gs,
                                              const BarycenterOptions& opts = {}) {
  if (gs.size() < 2) throw Error(ErrorCode::TooFewViews, "gaussian_mvd_exact needs >= 2 views");
  return wasserstein_variance(gs, opts);
}

/// Moment-matched Gaussian over a point set (population covariance).
inline Gaussian3 fit_gaussian(std::span<const Vec3> points) {
  if (points.empty()) throw Error(ErrorCode::EmptyFrame, "fit_gaussian: no points");
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : points) cov += (p - mean) * (p - mean).transpose();
  cov /= static_cast<double>(points.size());
  return Gaussian3::make(mean, cov, static_cast<double>(points.size()));
}

enum class CaseLabel { A, B, C, D, E };

inline constexpr std::array<CaseLabel, 5> kAllCases = {CaseLabel::A, CaseLabel::B, CaseLabel::C,
                                                       CaseLabel::D, CaseLabel::E};

inline char to_char(CaseLabel c) { return static_cast<char>('A' + static_cast<int>(c)); }

inline CaseLabel case_from_char(char c) {
  if (c < 'A' || c > 'E') throw Error(ErrorCode::ConfigError, std::string("unknown case ") + c);
  return static_cast<CaseLabel>(c - 'A');
}

/// A square planar patch observed by a row of cameras looking down +z.
struct CaseScenario {
  CaseLabel label = CaseLabel::A;
  int views = 5;
  int grid = 10;             // grid x grid surface points
  double extent = 1.0;       // patch side (m)
  double distance = 2.0;     // patch depth (m)
  double baseline = 0.6;     // total camera spread along x (m)
  double small_sigma = 0.01; // accurate-prediction noise (m)
  double large_sigma = 0.20; // inconsistent noise / bias magnitude (m)

  static CaseScenario standard(CaseLabel label) {
    CaseScenario s;
    s.label = label;
    return s;
  }
};

struct CaseRecord {
  CaseLabel label = CaseLabel::A;
  std::uint64_t seed = 0;
  double error = 0.0;  // RMS 3D error of the measurements (m)
  double m_p = 0.0;    // pointwise disagreement (m^2)
  double m_g = 0.0;    // Gaussian disagreement (m^2)
};

/// Generates per-view measurements for a scenario and evaluates both
/// disagreement measures against the true error.
///
/// Consistent errors are 3D displacements shared by all views; inconsistent
/// errors act along each view's ray. Case D reports its disagreement over the
/// consistently biased half of the patch, which is where a pointwise measure
/// misses the error.
inline CaseRecord run_case(const CaseScenario& sc, std::uint64_t seed) {
  if (sc.views < 2 || sc.grid < 2) throw Error(ErrorCode::TooFewViews, "run_case: degenerate scenario");
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(sc.label) + 1);
  std::normal_distribution<double> unit(0.0, 1.0);

  const int n = sc.grid;
  std::vector<Vec3> truth;
  truth.reserve(static_cast<std::size_t>(n) * n);
  for (int iy = 0; iy < n; ++iy) {
    for (int ix = 0; ix < n; ++ix) {
      const double x = sc.extent * ((ix + 0.5) / n - 0.5);
      const double y = sc.extent * ((iy + 0.5) / n - 0.5);
      truth.emplace_back(x, y, sc.distance);
    }
  }
  const Vec3 normal_bias(0.0, 0.0, sc.large_sigma);

  std::vector<Vec3> cameras;
  for (int j = 0; j < sc.views; ++j) {
    const double t = sc.views == 1 ? 0.0 : static_cast<double>(j) / (sc.views - 1) - 0.5;
    cameras.emplace_back(sc.baseline * t, 0.0, 0.0);
  }

  // measured[j][i]: view j's estimate of surface point i.
  std::vector<std::vector<Vec3>> measured(sc.views, std::vector<Vec3>(truth.size()));
  std::vector<std::vector<int>> segment(sc.views);
  for (int j = 0; j < sc.views; ++j) {
    const double view_bias = sc.large_sigma * unit(rng);
    int crop[4] = {0, 0, 0, 0};
    if (sc.label == CaseLabel::E) {
      std::uniform_int_distribution<int> trim(0, n / 3);
      for (int& c : crop) c = trim(rng);
    }
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const Vec3& x = truth[i];
      const Vec3 ray = (x - cameras[j]).normalized();
      const bool left = (static_cast<int>(i) % n) < n / 2;
      Vec3 est = x;
      switch (sc.label) {
        case CaseLabel::A: est += sc.small_sigma * unit(rng) * ray; break;
        case CaseLabel::B: est += sc.large_sigma * unit(rng) * ray; break;
        case CaseLabel::C: est += normal_bias + sc.small_sigma * unit(rng) * ray; break;
        case CaseLabel::D:
          est += (left ? normal_bias : view_bias * ray) + sc.small_sigma * unit(rng) * ray;
          break;
        case CaseLabel::E: break;
      }
      measured[j][i] = est;
      const int ix = static_cast<int>(i) % n;
      const int iy = static_cast<int>(i) / n;
      if (ix >= crop[0] && ix < n - crop[1] && iy >= crop[2] && iy < n - crop[3]) {
        segment[j].push_back(static_cast<int>(i));
      }
    }
  }

  std::vector<Gaussian3> fitted;
  fitted.reserve(sc.views);
  for (int j = 0; j < sc.views; ++j) {
    std::vector<Vec3> pts;
    pts.reserve(segment[j].size());
    for (int i : segment[j]) pts.push_back(measured[j][i]);
    fitted.push_back(fit_gaussian(pts));
  }

  CaseRecord rec;
  rec.label = sc.label;
  rec.seed = seed;
  rec.m_g = gaussian_mvd_exact(fitted).value;

  double mp_sum = 0.0;
  double err_sq = 0.0;
  std::size_t n_eval = 0;
  std::size_t n_err = 0;
  std::vector<Vec3> per_view(sc.views);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool left = (static_cast<int>(i) % n) < n / 2;
    if (sc.label == CaseLabel::D && !left) continue;
    for (int j = 0; j < sc.views; ++j) {
      per_view[j] = measured[j][i];
      err_sq += (measured[j][i] - truth[i]).squaredNorm();
      ++n_err;
    }
    mp_sum += pointwise_mvd(per_view);
    ++n_eval;
  }
  rec.m_p = mp_sum / static_cast<double>(n_eval);
  rec.error = std::sqrt(err_sq / static_cast<double>(n_err));
  return rec;
}

}  // namespace ufm
