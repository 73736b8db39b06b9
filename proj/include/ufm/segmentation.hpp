#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ufm/common.hpp"
#include "ufm/gaussian.hpp"
#include "ufm/geometry.hpp"
#include "ufm/image.hpp"

namespace ufm {

/// Running mean and scatter of 3D points (Welford update, Chan merge).
struct MomentAccumulator {
  double count = 0.0;
  Vec3 mean = Vec3::Zero();
  Mat3 scatter = Mat3::Zero();

  void add(const Vec3& p) {
    count += 1.0;
    const Vec3 delta = p - mean;
    mean += delta / count;
    scatter += delta * (p - mean).transpose();
  }

  void merge(const MomentAccumulator& other) {
    if (other.count == 0.0) return;
    if (count == 0.0) {
      *this = other;
      return;
    }
    const double n = count + other.count;
    const Vec3 delta = other.mean - mean;
    mean += delta * (other.count / n);
    scatter += other.scatter + delta * delta.transpose() * (count * other.count / n);
    count = n;
  }

  /// Population covariance; zero for fewer than two points.
  Mat3 covariance() const {
    if (count < 2.0) return Mat3::Zero();
    const Mat3 c = scatter / count;
    return 0.5 * (c + c.transpose());
  }
};

struct SegmentationConfig {
  double tau0 = 0.02;             // base discontinuity threshold (m)
  double tau1 = 0.005;            // quadratic depth coefficient (1/m)
  int min_support = 16;           // pixels
  int max_components = 4096;
  double merge_angle_deg = 20.0;  // scanline-to-cluster direction tolerance
  double thickness_floor = 1e-6;  // constant covariance floor (m^2)
  double thickness_scale = 0.5;   // depth-adaptive floor: (scale * tau(d))^2
  double thickness_gate = 1.0;    // links may not thicken a cluster past gate * tau(d)

  double threshold(double depth) const { return tau0 + tau1 * depth * depth; }

  void validate() const {
    if (!(tau0 > 0.0)) throw Error(ErrorCode::ConfigError, "seg.tau0 must be > 0");
    if (!(tau1 >= 0.0)) throw Error(ErrorCode::ConfigError, "seg.tau1 must be >= 0");
    if (min_support < 3) throw Error(ErrorCode::ConfigError, "seg.min_support must be >= 3");
    if (max_components < 1) throw Error(ErrorCode::ConfigError, "seg.max_components must be >= 1");
    if (!(merge_angle_deg > 0.0 && merge_angle_deg <= 90.0)) {
      throw Error(ErrorCode::ConfigError, "seg.merge_angle_deg must be in (0, 90]");
    }
    if (!(thickness_floor >= 0.0)) throw Error(ErrorCode::ConfigError, "seg.thickness_floor must be >= 0");
    if (!(thickness_scale >= 0.0)) {
      throw Error(ErrorCode::ConfigError, "seg.thickness_scale must be >= 0");
    }
    if (!(thickness_gate > 0.0)) throw Error(ErrorCode::ConfigError, "seg.thickness_gate must be > 0");
  }
};

/// Per-frame mixture of camera-frame Gaussians.
struct FrameMixture {
  std::vector<Gaussian3> components;
  std::vector<int> support;
  int frame_index = 0;
  int model_id = 1;
  std::int64_t valid_pixels = 0;
  std::int64_t discarded_support = 0;
  int discarded_components = 0;
  int overflow_components = 0;  // dropped by max_components

  std::size_t size() const noexcept { return components.size(); }
};

namespace detail {

struct Run {
  int u0 = 0;
  int u1 = 0;  // inclusive
  int cluster = -1;
};

struct Cluster {
  MomentAccumulator moments;
  int parent = 0;
  int plane_row = -1;  // row for which `normal`/`planar` are cached
  bool planar = false;
  Vec3 normal = Vec3::UnitZ();
};

class UnionFind {
 public:
  std::vector<Cluster> nodes;

  int create() {
    const int id = static_cast<int>(nodes.size());
    nodes.push_back({});
    nodes.back().parent = id;
    return id;
  }

  int find(int i) {
    while (nodes[i].parent != i) {
      nodes[i].parent = nodes[nodes[i].parent].parent;
      i = nodes[i].parent;
    }
    return i;
  }

  /// Merges two roots; the smaller id survives.
  int unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (b < a) std::swap(a, b);
    nodes[a].moments.merge(nodes[b].moments);
    nodes[b].parent = a;
    nodes[a].plane_row = -1;
    return a;
  }
};

/// Depth continuity between neighbouring pixels: the step from the previous
/// depth is within the threshold, or the depth continues the previous two
/// linearly in inverse depth (exact along any plane, which keeps surfaces seen
/// at grazing angles together).
inline bool continuous(double d, double d_prev, float d_prev2, double thr) {
  if (std::abs(d - d_prev) <= thr) return true;
  if (!valid_depth(d_prev2)) return false;
  const double inv = 2.0 / d_prev - 1.0 / d_prev2;
  if (!(inv > 0.0)) return false;
  return std::abs(d - 1.0 / inv) <= thr;
}

inline void refresh_plane(Cluster& c, int row) {
  if (c.plane_row == row) return;
  c.plane_row = row;
  c.planar = false;
  if (c.moments.count < 6.0) return;
  if (const auto n = plane_normal(c.moments.covariance())) {
    c.planar = true;
    c.normal = *n;
  }
}

/// Smallest eigenvalue of the accumulated covariance.
inline double thickness_sq(const MomentAccumulator& m) {
  if (m.count < 3.0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat3> es;
  es.computeDirect(m.covariance(), Eigen::EigenvaluesOnly);
  return es.eigenvalues()[0];
}

}  // namespace detail

/// Single-pass scanline segmentation of a depth map into camera-frame Gaussians.
///
/// Consecutive pixels of a row form a run while the depth step stays below the
/// adaptive threshold tau(d) = tau0 + tau1 d^2 and the run stays straight in 3D.
/// Runs join clusters of the previous row when they overlap horizontally, agree
/// in depth, and lie in the cluster's plane. Each finished cluster with enough
/// support becomes a moment-matched Gaussian weighted by its pixel count.
///
/// When `labels` is given it receives 1-based component ids (0 = unassigned).
inline FrameMixture segment_frame(const DepthMap& depth, const CameraIntrinsics& k,
                                  const SegmentationConfig& cfg, Image<std::uint16_t>* labels = nullptr) {
  if (depth.width() != k.width || depth.height() != k.height) {
    throw Error(ErrorCode::ShapeMismatch, "depth map does not match intrinsics");
  }
  const int w = depth.width();
  const int h = depth.height();
  const double sin_merge = std::sin(cfg.merge_angle_deg * std::numbers::pi / 180.0);

  std::vector<Vec3> row_pts(w), prev_pts(w);
  std::vector<int> pixel_cluster(static_cast<std::size_t>(w) * h, -1);
  detail::UnionFind uf;
  std::vector<detail::Run> prev_runs, runs;
  std::int64_t valid = 0;

  auto backproject_row = [&](int v, std::vector<Vec3>& out) {
    for (int u = 0; u < w; ++u) {
      const float d = depth(u, v);
      if (valid_depth(d)) out[u] = backproject(Vec2(u, v), d, k);
    }
  };

  for (int v = 0; v < h; ++v) {
    backproject_row(v, row_pts);
    runs.clear();

    // Horizontal pass: split the row into straight, depth-continuous runs.
    int u = 0;
    while (u < w) {
      if (!valid_depth(depth(u, v))) {
        ++u;
        continue;
      }
      detail::Run run;
      run.u0 = u;
      int last = u;
      // Straightness reference: the line from the mean of the first few points
      // to the running mean. Both averages are stable under noise and lag
      // behind a crease, so points past a corner drift off the line.
      constexpr int kAnchor = 4;
      Vec3 anchor = row_pts[u];
      Vec3 sum = row_pts[u];
      ++u;
      while (u < w && valid_depth(depth(u, v))) {
        const double d_prev = depth(last, v);
        const double thr = cfg.threshold(d_prev);
        if (!detail::continuous(depth(u, v), d_prev, last > run.u0 ? depth(last - 1, v) : kInvalid, thr)) break;
        const int n = last - run.u0 + 1;
        if (n >= 3) {
          const Vec3 base = n >= 2 * kAnchor ? anchor : row_pts[run.u0];
          const Vec3 axis = (n >= 2 * kAnchor ? sum / n : row_pts[last]) - base;
          if (axis.norm() > 0.0) {
            const Vec3 dir = axis.normalized();
            const Vec3 off = row_pts[u] - base;
            if ((off - off.dot(dir) * dir).norm() > thr) break;
          }
        }
        last = u;
        sum += row_pts[u];
        if (last - run.u0 + 1 == kAnchor) anchor = sum / kAnchor;
        ++u;
      }
      run.u1 = last;
      runs.push_back(run);
    }

    // Vertical pass: attach each run to compatible clusters of the previous row.
    std::size_t p0 = 0;
    for (detail::Run& run : runs) {
      MomentAccumulator rm;
      for (int x = run.u0; x <= run.u1; ++x) rm.add(row_pts[x]);
      const double thr_run = cfg.threshold(rm.mean.z());
      const double max_thick = cfg.thickness_gate * thr_run;
      const bool has_dir = run.u1 - run.u0 >= 2;
      const Vec3 run_dir = has_dir ? (row_pts[run.u1] - row_pts[run.u0]).normalized() : Vec3::Zero();

      while (p0 < prev_runs.size() && prev_runs[p0].u1 < run.u0) ++p0;
      int target = -1;
      for (std::size_t p = p0; p < prev_runs.size() && prev_runs[p].u0 <= run.u1; ++p) {
        const detail::Run& pr = prev_runs[p];
        const int a = std::max(pr.u0, run.u0);
        const int b = std::min(pr.u1, run.u1);
        int agree = 0;
        for (int x = a; x <= b; ++x) {
          const double dp = depth(x, v - 1);
          const float dpp = v >= 2 ? depth(x, v - 2) : kInvalid;
          if (detail::continuous(depth(x, v), dp, dpp, cfg.threshold(dp))) ++agree;
        }
        if (agree == 0 || 2 * agree < (b - a + 1)) continue;

        const int root = uf.find(pr.cluster);
        detail::Cluster& c = uf.nodes[root];
        detail::refresh_plane(c, v);
        if (c.planar) {
          if (has_dir && std::abs(run_dir.dot(c.normal)) > sin_merge) continue;
          // Runs may end a pixel or two past a crease, so endpoints get twice the tolerance.
          const double dm = std::abs((rm.mean - c.moments.mean).dot(c.normal));
          const double d0 = std::abs((row_pts[run.u0] - c.moments.mean).dot(c.normal));
          const double d1 = std::abs((row_pts[run.u1] - c.moments.mean).dot(c.normal));
          if (dm > thr_run || std::max(d0, d1) > 2.0 * thr_run) continue;
        }
        // A planar cluster already bounds the run's distance to its plane; the
        // explicit test is needed before a plane exists and when clusters unite.
        if (root != target && (!c.planar || target >= 0)) {
          MomentAccumulator joined = c.moments;
          joined.merge(rm);
          if (target >= 0) joined.merge(uf.nodes[target].moments);
          if (detail::thickness_sq(joined) > max_thick * max_thick) continue;
        }
        target = target < 0 ? root : uf.unite(target, root);
      }
      if (target < 0) target = uf.create();
      detail::Cluster& tc = uf.nodes[uf.find(target)];
      tc.moments.merge(rm);
      tc.plane_row = -1;
      run.cluster = uf.find(target);
      for (int x = run.u0; x <= run.u1; ++x) {
        pixel_cluster[static_cast<std::size_t>(v) * w + x] = run.cluster;
      }
      valid += run.u1 - run.u0 + 1;
    }
    std::swap(prev_runs, runs);
    std::swap(prev_pts, row_pts);
  }

  if (valid == 0) throw Error(ErrorCode::EmptyFrame, "no valid depth pixels");

  FrameMixture out;
  out.valid_pixels = valid;

  struct Candidate {
    int root;
    std::int64_t support;
  };
  std::vector<Candidate> kept;
  for (int i = 0; i < static_cast<int>(uf.nodes.size()); ++i) {
    if (uf.find(i) != i) continue;
    const auto n = static_cast<std::int64_t>(uf.nodes[i].moments.count);
    if (n < cfg.min_support) {
      out.discarded_support += n;
      ++out.discarded_components;
      continue;
    }
    kept.push_back({i, n});
  }
  if (static_cast<int>(kept.size()) > cfg.max_components) {
    std::vector<Candidate> by_size = kept;
    std::stable_sort(by_size.begin(), by_size.end(),
                     [](const Candidate& a, const Candidate& b) { return a.support > b.support; });
    for (std::size_t i = cfg.max_components; i < by_size.size(); ++i) {
      out.discarded_support += by_size[i].support;
      ++out.discarded_components;
      ++out.overflow_components;
    }
    by_size.resize(cfg.max_components);
    std::sort(by_size.begin(), by_size.end(),
              [](const Candidate& a, const Candidate& b) { return a.root < b.root; });
    kept = std::move(by_size);
  }

  std::vector<int> component_of(uf.nodes.size(), -1);
  out.components.reserve(kept.size());
  for (const Candidate& c : kept) {
    const MomentAccumulator& m = uf.nodes[c.root].moments;
    const double adaptive = cfg.thickness_scale * cfg.threshold(m.mean.z());
    const double floor = std::max({kPsdFloor, cfg.thickness_floor, adaptive * adaptive});
    component_of[c.root] = static_cast<int>(out.components.size());
    out.components.push_back(Gaussian3::make(m.mean, m.covariance(), static_cast<double>(c.support), 0.0, floor));
    out.support.push_back(static_cast<int>(c.support));
  }

  if (labels) {
    *labels = Image<std::uint16_t>(w, h, 0);
    for (std::size_t i = 0; i < pixel_cluster.size(); ++i) {
      if (pixel_cluster[i] < 0) continue;
      const int comp = component_of[uf.find(pixel_cluster[i])];
      if (comp >= 0) (*labels)[i] = static_cast<std::uint16_t>(std::min(comp + 1, 65535));
    }
  }
  return out;
}

}  // namespace ufm
