#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "ufm/common.hpp"
#include "ufm/gauss_ot.hpp"
#include "ufm/gaussian.hpp"
#include "ufm/geometry.hpp"
#include "ufm/image.hpp"
#include "ufm/observation.hpp"
#include "ufm/segmentation.hpp"
#include "ufm/spatial_index.hpp"

namespace ufm {

struct EngineConfig {
  double eta = 0.3;                // Bhattacharyya match threshold
  double occlusion_overlap = 0.6;  // mutual overlap above which the farther candidate is occluded
  double match_ratio = 0.75;       // candidates below match_ratio * best overlap are dropped
  double match_angle_deg = 30.0;   // planar pairs whose normals differ more than this never match
  double alpha = 0.3;              // EMA coefficient; 1 disables smoothing
  double prior_mean = 0.0;         // mu0 (m^2)
  double prior_weight = 1.0;       // pi0
  double prior_spread = 1.0;       // Sigma0; accepted but never used by the conditional mean
  int models = 1;                  // N alternated depth models
  int gmr_stride = 1;
  bool overlap_weighting = true;
  double z_min = kDefaultZMin;
  double gmr_cutoff = 6.0;         // Mahalanobis truncation radius
  SegmentationConfig seg;

  void validate() const {
    if (!(eta > 0.0 && eta < 1.0)) throw Error(ErrorCode::ConfigError, "eta must be in (0, 1)");
    if (!(occlusion_overlap > 0.0 && occlusion_overlap < 1.0)) {
      throw Error(ErrorCode::ConfigError, "occlusion_overlap must be in (0, 1)");
    }
    if (!(match_ratio >= 0.0 && match_ratio <= 1.0)) {
      throw Error(ErrorCode::ConfigError, "match_ratio must be in [0, 1]");
    }
    if (!(match_angle_deg > 0.0 && match_angle_deg <= 90.0)) {
      throw Error(ErrorCode::ConfigError, "match_angle_deg must be in (0, 90]");
    }
    if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorCode::ConfigError, "alpha must be in (0, 1]");
    if (!(prior_mean >= 0.0)) throw Error(ErrorCode::ConfigError, "prior_mean must be >= 0");
    if (!(prior_weight > 0.0)) throw Error(ErrorCode::ConfigError, "prior_weight must be > 0");
    if (!(prior_spread > 0.0)) throw Error(ErrorCode::ConfigError, "prior_spread must be > 0");
    if (models < 1) throw Error(ErrorCode::ConfigError, "models must be >= 1");
    if (gmr_stride < 1) throw Error(ErrorCode::ConfigError, "gmr_stride must be >= 1");
    if (!(z_min > 0.0)) throw Error(ErrorCode::ConfigError, "z_min must be > 0");
    if (!(gmr_cutoff > 0.0)) throw Error(ErrorCode::ConfigError, "gmr_cutoff must be > 0");
    seg.validate();
  }
};

/// Alternation schedule: frame i consumes model (i mod N) + 1.
inline int select_model(int frame_index, int n_models) {
  if (n_models < 1) throw Error(ErrorCode::ConfigError, "number of models must be >= 1");
  if (frame_index < 0) throw Error(ErrorCode::ConfigError, "negative frame index");
  return frame_index % n_models + 1;
}

/// Accumulated world-frame mixture.
struct GlobalMixture {
  std::vector<Gaussian3> components;
  std::vector<int> created_frame;

  std::size_t size() const noexcept { return components.size(); }

  double total_mass() const {
    double s = 0.0;
    for (const Gaussian3& g : components) s += g.weight;
    return s;
  }

  double max_disagreement() const {
    double m = 0.0;
    for (const Gaussian3& g : components) m = std::max(m, g.disagreement);
    return m;
  }

  /// Bytes per stored component: mean (3), covariance upper triangle (6), weight, disagreement.
  static constexpr std::size_t kRecordBytes = 11 * sizeof(double);
  std::size_t memory_bytes() const noexcept { return size() * kRecordBytes; }

  void append(const Gaussian3& g, int frame) {
    components.push_back(g);
    created_frame.push_back(frame);
  }
};

struct Match {
  int global = 0;
  double beta = 0.0;
};

/// Matches of one current component; empty means unmatched.
struct Correspondence {
  int current = 0;
  std::vector<Match> matches;  // ascending global index
};

namespace detail {

inline Vec2 sigma_extent(const Mat2& cov, double k) {
  return {k * std::sqrt(std::max(cov(0, 0), 0.0)), k * std::sqrt(std::max(cov(1, 1), 0.0))};
}

}  // namespace detail

/// Image-plane correspondence between the previous global mixture and the
/// current frame's components.
///
/// Previous components are moved into the current camera, those in front of the
/// near plane whose projected mean lands inside the image are indexed by their
/// 3-sigma boxes, and every current component keeps the candidates with
/// Bhattacharyya overlap >= eta. Among a component's candidates, one lying
/// farther than a strongly overlapping nearer candidate (by more than the
/// segmentation threshold at that depth) is treated as occluded.
inline std::vector<Correspondence> find_correspondences(const GlobalMixture& prev, const FrameMixture& curr,
                                                        const Pose& pose, const CameraIntrinsics& k,
                                                        const EngineConfig& cfg) {
  const RelativeTransform to_cam = world_to_camera(pose);
  std::vector<Gaussian2> projected(prev.size());
  std::vector<double> cam_depth(prev.size(), 0.0);
  std::vector<std::optional<Vec3>> normals(prev.size());
  const double cos_match = std::cos(cfg.match_angle_deg * std::numbers::pi / 180.0);
  BoxIndex<2> index;
  for (std::size_t j = 0; j < prev.size(); ++j) {
    const Gaussian3 gc = transform_gaussian(prev.components[j], to_cam);
    if (!(gc.mean.z() > cfg.z_min)) continue;
    const Gaussian2 p = project_gaussian(gc, k, j, cfg.z_min);
    if (!k.contains(p.mean)) continue;
    projected[j] = p;
    cam_depth[j] = gc.mean.z();
    normals[j] = plane_normal(gc.cov);
    const Vec2 ext = detail::sigma_extent(p.cov, 3.0);
    index.add(p.mean - ext, p.mean + ext, static_cast<int>(j));
  }
  index.build();

  std::vector<Correspondence> out(curr.size());
  std::vector<int> hits;
  struct Candidate {
    int global;
    double beta;
    double depth;
  };
  std::vector<Candidate> cands;
  for (std::size_t c = 0; c < curr.size(); ++c) {
    out[c].current = static_cast<int>(c);
    const Gaussian3& g = curr.components[c];
    if (!(g.mean.z() > cfg.z_min)) continue;
    const Gaussian2 p = project_gaussian(g, k, c, cfg.z_min);
    const Vec2 ext = detail::sigma_extent(p.cov, 3.0);
    index.query(p.mean - ext, p.mean + ext, hits);
    const std::optional<Vec3> normal = plane_normal(g.cov);
    cands.clear();
    for (int j : hits) {
      if (normal && normals[j] && std::abs(normal->dot(*normals[j])) < cos_match) continue;
      const double beta = bhattacharyya_2d(p, projected[j]);
      if (beta >= cfg.eta) cands.push_back({j, beta, cam_depth[j]});
    }
    if (cands.empty()) continue;
    double best = 0.0;
    for (const Candidate& cd : cands) best = std::max(best, cd.beta);
    std::erase_if(cands, [&](const Candidate& cd) { return cd.beta < cfg.match_ratio * best; });

    // A nearer candidate hides a farther one only if it also explains the current component better.
    std::vector<char> occluded(cands.size(), 0);
    for (std::size_t a = 0; a < cands.size(); ++a) {
      for (std::size_t b = 0; b < cands.size(); ++b) {
        if (a == b) continue;
        const Candidate& near = cands[b];
        const Candidate& far = cands[a];
        if (near.beta <= far.beta) continue;
        if (far.depth - near.depth <= cfg.seg.threshold(near.depth)) continue;
        if (bhattacharyya_2d(projected[near.global], projected[far.global]) > cfg.occlusion_overlap) {
          occluded[a] = 1;
          break;
        }
      }
    }
    for (std::size_t a = 0; a < cands.size(); ++a) {
      if (!occluded[a]) out[c].matches.push_back({cands[a].global, cands[a].beta});
    }
  }
  return out;
}

/// Splits an integer mass among matches proportionally to their overlaps
/// (largest remainder; ties go to the earlier match).
inline std::vector<std::int64_t> split_mass(std::int64_t total, std::span<const Match> matches) {
  std::vector<std::int64_t> shares(matches.size(), 0);
  if (matches.empty()) return shares;
  double bsum = 0.0;
  for (const Match& m : matches) bsum += m.beta;
  std::vector<double> frac(matches.size());
  std::int64_t given = 0;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const double raw = static_cast<double>(total) * matches[i].beta / bsum;
    shares[i] = static_cast<std::int64_t>(std::floor(raw));
    frac[i] = raw - static_cast<double>(shares[i]);
    given += shares[i];
  }
  std::vector<std::size_t> order(matches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t r = 0; given < total; ++r, ++given) ++shares[order[r % order.size()]];
  return shares;
}

struct FuseStats {
  int appended = 0;
  int matched_current = 0;
  int pairs = 0;
  int skipped_pairs = 0;  // numerical failures; their mass is still accumulated
};

/// Fuses the current frame's components into the global mixture (in place).
///
/// Pairs are applied in ascending (current, global) order. Each pair moves the
/// global component a fraction lambda = w / (pi_k + w) along the geodesic toward
/// the current component, where w is the component's mass share (times beta with
/// overlap weighting), and folds the pre-update W2^2 into the running average m_k.
inline FuseStats fuse(GlobalMixture& global, const FrameMixture& curr, const std::vector<Correspondence>& corr,
                      const Pose& pose, int frame_index, const EngineConfig& cfg) {
  if (corr.size() != curr.size()) throw Error(ErrorCode::ShapeMismatch, "correspondence list size differs");
  const RelativeTransform to_world = camera_to_world(pose);
  FuseStats st;
  const std::size_t k_before = global.size();
  for (std::size_t c = 0; c < curr.size(); ++c) {
    Gaussian3 gc = transform_gaussian(curr.components[c], to_world);
    gc.disagreement = 0.0;
    const auto& matches = corr[c].matches;
    if (matches.empty()) {
      global.append(gc, frame_index);
      ++st.appended;
      continue;
    }
    ++st.matched_current;
    const std::vector<std::int64_t> shares = split_mass(static_cast<std::int64_t>(std::llround(gc.weight)), matches);
    for (std::size_t i = 0; i < matches.size(); ++i) {
      const auto k = static_cast<std::size_t>(matches[i].global);
      if (k >= k_before) throw Error(ErrorCode::InternalError, "correspondence refers to a new component");
      Gaussian3& gk = global.components[k];
      const double share = static_cast<double>(shares[i]);
      if (share == 0.0) continue;
      ++st.pairs;
      const double w = cfg.overlap_weighting ? matches[i].beta * share : share;
      const double lambda = w / (gk.weight + w);
      try {
        const double w2 = w2_squared(gk, gc);
        const GaussianGeometry next = geodesic_interpolate(gk, gc, lambda);
        gk.mean = next.mean;
        gk.cov = next.cov;
        gk.disagreement = std::max(0.0, (1.0 - lambda) * gk.disagreement + lambda * w2);
      } catch (const Error&) {
        ++st.skipped_pairs;
      }
      gk.weight += share;
    }
  }
  return st;
}

/// Mixture regression of disagreement at x against every component (no truncation).
inline double gmr_query(const GlobalMixture& m, const Vec3& x, const EngineConfig& cfg) {
  double num = cfg.prior_weight * cfg.prior_mean;
  double den = cfg.prior_weight;
  for (const Gaussian3& g : m.components) {
    const double p = g.weight * gaussian_density(x, g);
    num += p * g.disagreement;
    den += p;
  }
  return num / den;
}

/// Precomputed, spatially indexed form of a mixture for dense regression.
/// Components contribute only within `cutoff` Mahalanobis units.
class GmrIndex {
 public:
  GmrIndex(const GlobalMixture& m, double cutoff) : cutoff_sq_(cutoff * cutoff) {
    entries_.reserve(m.size());
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const Gaussian3& g = m.components[i];
      Eigen::LLT<Mat3> llt(g.cov);
      Entry e;
      e.mean = g.mean;
      e.m = g.disagreement;
      if (llt.info() != Eigen::Success) {
        e.valid = false;
      } else {
        const Mat3 l = llt.matrixL();
        e.inv_l = l.triangularView<Eigen::Lower>().solve(Mat3::Identity());
        const double log_det = 2.0 * l.diagonal().array().log().sum();
        e.log_coef = std::log(g.weight) - 0.5 * log_det - 1.5 * log_2pi;
        const Vec3 ext = cutoff * g.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
        index_.add(g.mean - ext, g.mean + ext, static_cast<int>(i));
      }
      entries_.push_back(e);
    }
    index_.build();
  }

  void candidates(const Vec3& lo, const Vec3& hi, std::vector<int>& out) const { index_.query(lo, hi, out); }

  double evaluate(const Vec3& x, std::span<const int> cands, double prior_mean, double prior_weight) const {
    double num = prior_weight * prior_mean;
    double den = prior_weight;
    for (int i : cands) {
      const Entry& e = entries_[i];
      const double d2 = (e.inv_l * (x - e.mean)).squaredNorm();
      if (d2 > cutoff_sq_) continue;
      const double p = std::exp(e.log_coef - 0.5 * d2);
      num += p * e.m;
      den += p;
    }
    return num / den;
  }

  double query(const Vec3& x, double prior_mean, double prior_weight) const {
    std::vector<int> c;
    candidates(x, x, c);
    return evaluate(x, c, prior_mean, prior_weight);
  }

 private:
  struct Entry {
    Vec3 mean = Vec3::Zero();
    Mat3 inv_l = Mat3::Identity();
    double log_coef = 0.0;
    double m = 0.0;
    bool valid = true;
  };
  std::vector<Entry> entries_;
  BoxIndex<3> index_;
  double cutoff_sq_;
};

/// Dense disagreement map for one frame (NaN at invalid pixels), optionally
/// smoothed against the previous smoothed map.
inline VarianceMap regress_frame(const GmrIndex& index, const DepthMap& depth, const Pose& pose,
                                 const CameraIntrinsics& k, const EngineConfig& cfg,
                                 const VarianceMap* prev_smoothed = nullptr) {
  const int w = depth.width();
  const int h = depth.height();
  const int s = cfg.gmr_stride;
  constexpr int kTile = 8;
  VarianceMap out(w, h, kInvalid);
  std::vector<Vec3> pts(static_cast<std::size_t>(w) * h);
  std::vector<int> cands;

  auto world_point = [&](int u, int v) { return pose.to_world(backproject(Vec2(u, v), depth(u, v), k)); };

  // Anchors: pixels on the stride lattice, evaluated tile by tile against a shared candidate list.
  for (int ty = 0; ty < h; ty += kTile * s) {
    for (int tx = 0; tx < w; tx += kTile * s) {
      Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
      Vec3 hi = -lo;
      bool any = false;
      for (int v = ty; v < std::min(h, ty + kTile * s); v += s) {
        for (int u = tx; u < std::min(w, tx + kTile * s); u += s) {
          if (!valid_depth(depth(u, v))) continue;
          const Vec3 p = world_point(u, v);
          pts[static_cast<std::size_t>(v) * w + u] = p;
          lo = lo.cwiseMin(p);
          hi = hi.cwiseMax(p);
          any = true;
        }
      }
      if (!any) continue;
      index.candidates(lo, hi, cands);
      for (int v = ty; v < std::min(h, ty + kTile * s); v += s) {
        for (int u = tx; u < std::min(w, tx + kTile * s); u += s) {
          if (!valid_depth(depth(u, v))) continue;
          out(u, v) = static_cast<float>(
              index.evaluate(pts[static_cast<std::size_t>(v) * w + u], cands, cfg.prior_mean, cfg.prior_weight));
        }
      }
    }
  }

  if (s > 1) {
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        if (u % s == 0 && v % s == 0) continue;
        if (!valid_depth(depth(u, v))) continue;
        int au = static_cast<int>(std::lround(static_cast<double>(u) / s)) * s;
        int av = static_cast<int>(std::lround(static_cast<double>(v) / s)) * s;
        if (au >= w) au -= s;
        if (av >= h) av -= s;
        const float anchor = out(au, av);
        out(u, v) = std::isnan(anchor) ? static_cast<float>(index.query(world_point(u, v), cfg.prior_mean,
                                                                        cfg.prior_weight))
                                       : anchor;
      }
    }
  }

  if (prev_smoothed && prev_smoothed->same_shape(out) && cfg.alpha < 1.0) {
    const float a = static_cast<float>(cfg.alpha);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const float prev = (*prev_smoothed)[i];
      if (!std::isnan(out[i]) && !std::isnan(prev)) out[i] = (1.0f - a) * prev + a * out[i];
    }
  }
  return out;
}

/// Total variance: disagreement plus whichever optional maps are present.
inline VarianceMap compose_total(const VarianceMap& mvd, const VarianceMap* aleatoric = nullptr,
                                 const VarianceMap* epistemic = nullptr) {
  if (aleatoric) require_same_shape(mvd, *aleatoric, "aleatoric map shape differs");
  if (epistemic) require_same_shape(mvd, *epistemic, "epistemic map shape differs");
  VarianceMap out = mvd;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (std::isnan(out[i])) continue;
    if (aleatoric) out[i] += (*aleatoric)[i];
    if (epistemic) out[i] += (*epistemic)[i];
  }
  return out;
}

/// Wall-clock milliseconds per stage of the last processed frame.
struct StageTimings {
  double segment = 0.0;
  double correspond = 0.0;
  double fuse = 0.0;
  double regress = 0.0;
  double total() const { return segment + correspond + fuse + regress; }
};

struct FrameStats {
  int frame_index = 0;
  int model_id = 1;
  int observations = 1;
  int frame_components = 0;
  FuseStats fusion;
  std::size_t global_components = 0;
  double total_mass = 0.0;
  StageTimings timings;
};

struct FrameResult {
  DepthMap depth;     // depth the map refers to (mean depth in multi mode)
  VarianceMap mvd;    // smoothed multiview disagreement
  VarianceMap total;  // mvd + aleatoric + epistemic
  FrameStats stats;
};

/// Sequential estimator holding the global mixture and the smoothed map.
class Engine {
 public:
  Engine(const EngineConfig& cfg, const CameraIntrinsics& k) : cfg_(cfg), k_(k) {
    cfg_.validate();
    k_.validate();
  }

  const EngineConfig& config() const noexcept { return cfg_; }
  const GlobalMixture& mixture() const noexcept { return mixture_; }
  std::int64_t fused_support() const noexcept { return fused_support_; }
  std::int64_t discarded_support() const noexcept { return discarded_support_; }

  FrameResult process_frame(const FrameObservation& obs) { return process_frame(std::span(&obs, 1)); }

  /// Consumes one or more observations sharing a frame index. Each is fused in
  /// turn; regression then runs on the pixelwise mean of their depths.
  FrameResult process_frame(std::span<const FrameObservation> obs) {
    using clock = std::chrono::steady_clock;
    auto ms = [](clock::time_point a, clock::time_point b) {
      return std::chrono::duration<double, std::milli>(b - a).count();
    };
    if (obs.empty()) throw Error(ErrorCode::ConfigError, "process_frame: no observations");
    const int frame = obs.front().frame_index;
    for (const FrameObservation& o : obs) {
      if (o.frame_index != frame) throw Error(ErrorCode::ConfigError, "observations mix frame indices");
      if (o.depth.width() != k_.width || o.depth.height() != k_.height) {
        throw Error(ErrorCode::ShapeMismatch, "depth map does not match intrinsics");
      }
      o.check_shapes();
    }
    if (last_frame_ && frame <= *last_frame_) {
      throw Error(ErrorCode::ConfigError, "frame indices must increase");
    }
    last_frame_ = frame;

    FrameResult res;
    res.stats.frame_index = frame;
    res.stats.model_id = obs.front().model_id;
    res.stats.observations = static_cast<int>(obs.size());

    for (const FrameObservation& o : obs) {
      auto t0 = clock::now();
      FrameMixture fm;
      if (count_valid(o.depth) > 0) fm = segment_frame(o.depth, k_, cfg_.seg);
      fm.frame_index = frame;
      fm.model_id = o.model_id;
      auto t1 = clock::now();
      const std::vector<Correspondence> corr = find_correspondences(mixture_, fm, o.pose, k_, cfg_);
      auto t2 = clock::now();
      const FuseStats fs = fuse(mixture_, fm, corr, o.pose, frame, cfg_);
      auto t3 = clock::now();

      fused_support_ += fm.valid_pixels - fm.discarded_support;
      discarded_support_ += fm.discarded_support;
      res.stats.frame_components += static_cast<int>(fm.size());
      res.stats.fusion.appended += fs.appended;
      res.stats.fusion.matched_current += fs.matched_current;
      res.stats.fusion.pairs += fs.pairs;
      res.stats.fusion.skipped_pairs += fs.skipped_pairs;
      res.stats.timings.segment += ms(t0, t1);
      res.stats.timings.correspond += ms(t1, t2);
      res.stats.timings.fuse += ms(t2, t3);
    }

    auto t4 = clock::now();
    res.depth = obs.size() == 1 ? obs.front().depth : mean_depth(obs);
    const GmrIndex index(mixture_, cfg_.gmr_cutoff);
    res.mvd = regress_frame(index, res.depth, obs.front().pose, k_, cfg_, prev_smoothed_ ? &*prev_smoothed_ : nullptr);
    prev_smoothed_ = res.mvd;
    res.stats.timings.regress = ms(t4, clock::now());

    const std::optional<VarianceMap> a = mean_map(obs, &FrameObservation::aleatoric);
    const std::optional<VarianceMap> e = mean_map(obs, &FrameObservation::epistemic);
    res.total = compose_total(res.mvd, a ? &*a : nullptr, e ? &*e : nullptr);
    res.stats.global_components = mixture_.size();
    res.stats.total_mass = mixture_.total_mass();
    return res;
  }

 private:
  static DepthMap mean_depth(std::span<const FrameObservation> obs) {
    DepthMap out(obs.front().depth.width(), obs.front().depth.height(), 0.0f);
    for (std::size_t i = 0; i < out.size(); ++i) {
      double sum = 0.0;
      int n = 0;
      for (const FrameObservation& o : obs) {
        if (valid_depth(o.depth[i])) {
          sum += o.depth[i];
          ++n;
        }
      }
      out[i] = n > 0 ? static_cast<float>(sum / n) : kInvalid;
    }
    return out;
  }

  static std::optional<VarianceMap> mean_map(std::span<const FrameObservation> obs,
                                             std::optional<VarianceMap> FrameObservation::*field) {
    std::optional<VarianceMap> out;
    int n = 0;
    for (const FrameObservation& o : obs) {
      const auto& m = o.*field;
      if (!m) continue;
      if (!out) {
        out = *m;
      } else {
        for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] += (*m)[i];
      }
      ++n;
    }
    if (out && n > 1) {
      for (float& x : out->pixels()) x /= static_cast<float>(n);
    }
    return out;
  }

  EngineConfig cfg_;
  CameraIntrinsics k_;
  GlobalMixture mixture_;
  std::optional<VarianceMap> prev_smoothed_;
  std::optional<int> last_frame_;
  std::int64_t fused_support_ = 0;
  std::int64_t discarded_support_ = 0;
};

}  // namespace ufm
