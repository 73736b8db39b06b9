#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "ufm/common.hpp"
#include "ufm/data_io.hpp"
#include "ufm/geometry.hpp"
#include "ufm/image.hpp"
#include "ufm/observation.hpp"
#include "ufm/text.hpp"

namespace ufm {

/// Infinite plane through `point` with normal `normal`.
struct PlanePrimitive {
  std::string id;
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

/// Axis-aligned box.
struct BoxPrimitive {
  std::string id;
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();
};

struct Waypoint {
  Vec3 eye = Vec3::Zero();
  Vec3 target = Vec3::UnitX();
};

struct NoiseRegime {
  double iid_sigma = 0.0;         // m, or relative to depth when depth_scaled
  bool depth_scaled = false;
  std::map<std::string, double> region_bias;  // primitive id -> constant depth offset (m)
  double frame_bias_sigma = 0.0;  // m, one draw per frame and model
  std::uint64_t seed = 0;
};

struct SceneSpec {
  CameraIntrinsics intrinsics;
  std::vector<PlanePrimitive> planes;
  std::vector<BoxPrimitive> boxes;
  std::vector<Waypoint> waypoints;
  int frames = 0;  // 0 = one frame per waypoint
  NoiseRegime noise;
  int models = 1;
  double d_max = kDefaultDMax;
  bool emit_aleatoric = false;

  int frame_count() const { return frames > 0 ? frames : static_cast<int>(waypoints.size()); }
  int primitive_count() const { return static_cast<int>(planes.size() + boxes.size()); }

  const std::string& primitive_id(int index) const {
    return index < static_cast<int>(planes.size()) ? planes[index].id : boxes[index - planes.size()].id;
  }

  void validate() const {
    intrinsics.validate();
    if (primitive_count() == 0) throw Error(ErrorCode::ConfigError, "scene has no primitives");
    if (waypoints.empty()) throw Error(ErrorCode::ConfigError, "scene has no waypoints");
    if (frames < 0) throw Error(ErrorCode::ConfigError, "frames must be >= 0");
    if (models < 1) throw Error(ErrorCode::ConfigError, "models must be >= 1");
    if (!(d_max > 0.0)) throw Error(ErrorCode::ConfigError, "d_max must be > 0");
    if (!(noise.iid_sigma >= 0.0) || !(noise.frame_bias_sigma >= 0.0)) {
      throw Error(ErrorCode::ConfigError, "noise sigmas must be >= 0");
    }
    for (const auto& p : planes) {
      if (!(p.normal.norm() > 0.0)) throw Error(ErrorCode::ConfigError, "plane " + p.id + " has a zero normal");
    }
    for (const auto& b : boxes) {
      if (!(b.lo.array() < b.hi.array()).all()) throw Error(ErrorCode::ConfigError, "box " + b.id + " is empty");
    }
    for (const auto& [id, bias] : noise.region_bias) {
      bool found = false;
      for (int i = 0; i < primitive_count(); ++i) found = found || primitive_id(i) == id;
      if (!found) throw Error(ErrorCode::ConfigError, "region bias names unknown primitive " + id);
    }
    for (const auto& w : waypoints) {
      if (!((w.target - w.eye).norm() > 0.0)) throw Error(ErrorCode::ConfigError, "waypoint eye equals target");
    }
  }
};

/// Camera-to-world pose looking from eye toward target (world z up; camera x
/// right, y down, z forward).
inline Pose look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 z = (target - eye).normalized();
  Vec3 up = Vec3::UnitZ();
  if (std::abs(z.dot(up)) > 0.999) up = Vec3::UnitY();
  const Vec3 x = z.cross(up).normalized();
  const Vec3 y = z.cross(x);
  Pose p;
  p.rotation.col(0) = x;
  p.rotation.col(1) = y;
  p.rotation.col(2) = z;
  p.translation = eye;
  return p;
}

/// Poses along the piecewise-linear waypoint path, one per frame.
inline std::vector<Pose> scene_trajectory(const SceneSpec& s) {
  const int n = s.frame_count();
  const int w = static_cast<int>(s.waypoints.size());
  std::vector<Pose> out;
  out.reserve(n);
  for (int f = 0; f < n; ++f) {
    const double t = (n > 1 && w > 1) ? static_cast<double>(f) * (w - 1) / (n - 1) : 0.0;
    const int seg = std::min(static_cast<int>(t), std::max(0, w - 2));
    const double a = w > 1 ? t - seg : 0.0;
    const Waypoint& p = s.waypoints[seg];
    const Waypoint& q = s.waypoints[std::min(seg + 1, w - 1)];
    out.push_back(look_at((1 - a) * p.eye + a * q.eye, (1 - a) * p.target + a * q.target));
  }
  return out;
}

/// Parses the key=value scene grammar (see README). Errors carry "source:line".
inline SceneSpec parse_scene(std::istream& in, const std::string& source = "<scene>") {
  SceneSpec s;
  bool have_k = false;
  std::string raw;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw Error(ErrorCode::ParseError, source + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = detail::trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    std::istringstream is(value);
    auto done = [&] {
      std::string extra;
      if (is >> extra) fail("trailing input after " + key);
    };
    if (key == "intrinsics") {
      if (!(is >> s.intrinsics.fx >> s.intrinsics.fy >> s.intrinsics.cx >> s.intrinsics.cy >> s.intrinsics.width >>
            s.intrinsics.height)) {
        fail("intrinsics needs fx fy cx cy width height");
      }
      done();
      if (!s.intrinsics.valid()) fail("invalid intrinsics");
      have_k = true;
    } else if (key == "plane") {
      PlanePrimitive p;
      if (!(is >> p.id >> p.point.x() >> p.point.y() >> p.point.z() >> p.normal.x() >> p.normal.y() >>
            p.normal.z())) {
        fail("plane needs id px py pz nx ny nz");
      }
      done();
      if (!(p.normal.norm() > 0.0)) fail("plane normal is zero");
      p.normal.normalize();
      s.planes.push_back(p);
    } else if (key == "box") {
      BoxPrimitive b;
      if (!(is >> b.id >> b.lo.x() >> b.lo.y() >> b.lo.z() >> b.hi.x() >> b.hi.y() >> b.hi.z())) {
        fail("box needs id x0 y0 z0 x1 y1 z1");
      }
      done();
      if (!(b.lo.array() < b.hi.array()).all()) fail("box min must be below max on every axis");
      s.boxes.push_back(b);
    } else if (key == "waypoint") {
      Waypoint w;
      if (!(is >> w.eye.x() >> w.eye.y() >> w.eye.z() >> w.target.x() >> w.target.y() >> w.target.z())) {
        fail("waypoint needs ex ey ez tx ty tz");
      }
      done();
      if (!((w.target - w.eye).norm() > 0.0)) fail("waypoint eye equals target");
      s.waypoints.push_back(w);
    } else if (key == "frames") {
      if (!(is >> s.frames) || s.frames < 1) fail("frames must be a positive integer");
      done();
    } else if (key == "models") {
      if (!(is >> s.models) || s.models < 1) fail("models must be a positive integer");
      done();
    } else if (key == "d_max") {
      if (!(is >> s.d_max) || !(s.d_max > 0.0)) fail("d_max must be positive");
      done();
    } else if (key == "emit_aleatoric") {
      if (!detail::parse_bool(value, s.emit_aleatoric)) fail("emit_aleatoric must be a boolean");
    } else if (key == "noise.iid_sigma") {
      if (!(is >> s.noise.iid_sigma) || !(s.noise.iid_sigma >= 0.0)) fail("noise.iid_sigma must be >= 0");
      done();
    } else if (key == "noise.depth_scaled") {
      if (!detail::parse_bool(value, s.noise.depth_scaled)) fail("noise.depth_scaled must be a boolean");
    } else if (key == "noise.frame_bias_sigma") {
      if (!(is >> s.noise.frame_bias_sigma) || !(s.noise.frame_bias_sigma >= 0.0)) {
        fail("noise.frame_bias_sigma must be >= 0");
      }
      done();
    } else if (key == "noise.seed") {
      if (!(is >> s.noise.seed)) fail("noise.seed must be a non-negative integer");
      done();
    } else if (key == "noise.region_bias") {
      const auto colon = value.find(':');
      if (colon == std::string::npos) fail("noise.region_bias needs id:bias");
      const std::string id = detail::trim(value.substr(0, colon));
      std::istringstream bs(value.substr(colon + 1));
      double bias = 0.0;
      if (id.empty() || !(bs >> bias)) fail("noise.region_bias needs id:bias");
      s.noise.region_bias[id] = bias;
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  if (!have_k) throw Error(ErrorCode::ParseError, source + ": missing intrinsics");
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, source + ": " + e.message());
  }
  return s;
}

inline SceneSpec load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open scene " + path.string());
  return parse_scene(in, path.string());
}

/// Nearest intersection along a ray; returns false if nothing is hit.
/// `t` is measured in units of `dir`.
inline bool cast_ray(const SceneSpec& s, const Vec3& origin, const Vec3& dir, double& t, int& primitive) {
  t = std::numeric_limits<double>::infinity();
  primitive = -1;
  for (std::size_t i = 0; i < s.planes.size(); ++i) {
    const PlanePrimitive& p = s.planes[i];
    const double denom = p.normal.dot(dir);
    if (std::abs(denom) < 1e-12) continue;
    const double ti = p.normal.dot(p.point - origin) / denom;
    if (ti > 0.0 && ti < t) {
      t = ti;
      primitive = static_cast<int>(i);
    }
  }
  for (std::size_t i = 0; i < s.boxes.size(); ++i) {
    const BoxPrimitive& b = s.boxes[i];
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (std::abs(dir[a]) < 1e-15) {
        miss = origin[a] < b.lo[a] || origin[a] > b.hi[a];
        continue;
      }
      double ta = (b.lo[a] - origin[a]) / dir[a];
      double tb = (b.hi[a] - origin[a]) / dir[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
    }
    if (miss || t0 > t1) continue;
    const double ti = t0 > 0.0 ? t0 : t1;
    if (ti > 0.0 && ti < t) {
      t = ti;
      primitive = static_cast<int>(s.planes.size() + i);
    }
  }
  return primitive >= 0;
}

/// Exact z-depth for every pixel (NaN where nothing is hit within d_max) and,
/// optionally, the index of the primitive hit (-1 for none).
inline DepthMap render_ground_truth(const SceneSpec& s, const Pose& pose, Image<int>* hit_ids = nullptr) {
  const CameraIntrinsics& k = s.intrinsics;
  DepthMap gt(k.width, k.height, kInvalid);
  if (hit_ids) *hit_ids = Image<int>(k.width, k.height, -1);
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      // Unit camera-z direction, so the ray parameter is the z-depth.
      const Vec3 d_cam((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      double t = 0.0;
      int prim = -1;
      if (!cast_ray(s, pose.translation, pose.rotation * d_cam, t, prim) || t > s.d_max) continue;
      gt(u, v) = static_cast<float>(t);
      if (hit_ids) (*hit_ids)(u, v) = prim;
    }
  }
  return gt;
}

/// Renders one frame as produced by one model: ground truth plus region bias,
/// the frame's bias draw, and per-pixel noise.
inline FrameObservation render_frame(const SceneSpec& s, const Pose& pose, int frame, int model_id) {
  Image<int> ids;
  FrameObservation obs;
  obs.frame_index = frame;
  obs.model_id = model_id;
  obs.pose = pose;
  obs.ground_truth = render_ground_truth(s, pose, &ids);
  const DepthMap& gt = *obs.ground_truth;
  if (count_valid(gt) == 0) {
    throw Error(ErrorCode::NoVisibleGeometry, "frame " + std::to_string(frame) + " sees no geometry");
  }

  std::vector<double> bias(s.primitive_count(), 0.0);
  for (int i = 0; i < s.primitive_count(); ++i) {
    if (auto it = s.noise.region_bias.find(s.primitive_id(i)); it != s.noise.region_bias.end()) bias[i] = it->second;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(s.noise.seed), static_cast<std::uint32_t>(s.noise.seed >> 32),
                    static_cast<std::uint32_t>(frame), static_cast<std::uint32_t>(model_id)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double frame_bias = s.noise.frame_bias_sigma > 0.0 ? s.noise.frame_bias_sigma * unit(rng) : 0.0;
  const bool noisy = s.noise.iid_sigma > 0.0;

  obs.depth = DepthMap(gt.width(), gt.height(), kInvalid);
  if (s.emit_aleatoric) obs.aleatoric = VarianceMap(gt.width(), gt.height(), kInvalid);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!valid_depth(gt[i])) continue;
    const double g = gt[i];
    const double sigma = s.noise.depth_scaled ? s.noise.iid_sigma * g : s.noise.iid_sigma;
    double d = g + bias[ids[i]] + frame_bias;
    if (noisy) d += sigma * unit(rng);
    const float df = (d == g) ? gt[i] : static_cast<float>(d);
    if (!(df > 0.0f) || df > s.d_max) continue;
    obs.depth[i] = df;
    if (obs.aleatoric) (*obs.aleatoric)[i] = static_cast<float>(sigma * sigma);
  }
  return obs;
}

using Sequence = std::vector<std::vector<FrameObservation>>;

/// Renders every frame for one model.
inline std::vector<FrameObservation> render_synthetic(const SceneSpec& s, int model_id = 1) {
  const std::vector<Pose> traj = scene_trajectory(s);
  std::vector<FrameObservation> out;
  out.reserve(traj.size());
  for (std::size_t f = 0; f < traj.size(); ++f) out.push_back(render_frame(s, traj[f], static_cast<int>(f), model_id));
  return out;
}

/// Renders the sequence as the engine would consume it: one observation per
/// frame following the alternation schedule, or all models per frame.
inline Sequence render_sequence(const SceneSpec& s, InferenceMode mode = InferenceMode::Alternate) {
  const std::vector<Pose> traj = scene_trajectory(s);
  Sequence out;
  for (std::size_t f = 0; f < traj.size(); ++f) {
    const int frame = static_cast<int>(f);
    std::vector<FrameObservation> group;
    if (mode == InferenceMode::Multi) {
      for (int m = 1; m <= s.models; ++m) group.push_back(render_frame(s, traj[f], frame, m));
    } else {
      group.push_back(render_frame(s, traj[f], frame, select_model(frame, s.models)));
    }
    out.push_back(std::move(group));
  }
  return out;
}

/// Writes the scene as a sequence directory (every model, ground truth, and
/// aleatoric maps when enabled).
inline void write_dataset(const SceneSpec& s, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "gt");
  for (int m = 1; m <= s.models; ++m) fs::create_directories(root / ("model_" + std::to_string(m)));
  if (s.emit_aleatoric) fs::create_directories(root / "aleatoric");
  write_intrinsics(root / "intrinsics.txt", s.intrinsics);
  const std::vector<Pose> traj = scene_trajectory(s);
  std::vector<std::pair<int, Pose>> poses;
  for (std::size_t f = 0; f < traj.size(); ++f) {
    const int frame = static_cast<int>(f);
    poses.emplace_back(frame, traj[f]);
    for (int m = 1; m <= s.models; ++m) {
      const FrameObservation obs = render_frame(s, traj[f], frame, m);
      write_f32(root / ("model_" + std::to_string(m)) / (frame_stem(frame) + ".f32"), obs.depth);
      if (m == 1) {
        write_f32(root / "gt" / (frame_stem(frame) + ".f32"), *obs.ground_truth);
        if (obs.aleatoric) write_f32(root / "aleatoric" / (frame_stem(frame) + ".f32"), *obs.aleatoric);
      }
    }
  }
  write_poses(root / "poses.txt", poses);
}

/// Per-frame pose perturbation: each call to apply() composes the group's
/// poses with a fresh random rotation (uniform axis, angle |N(0, rot_sigma)|
/// degrees) and translation N(0, trans_sigma^2 I). Observations sharing a frame
/// receive the same perturbation.
class PoseNoise {
 public:
  PoseNoise(double rot_sigma_deg, double trans_sigma, std::uint64_t seed)
      : sigma_rad_(rot_sigma_deg * std::numbers::pi / 180.0), trans_sigma_(trans_sigma), rng_(seed) {
    if (!(rot_sigma_deg >= 0.0) || !(trans_sigma >= 0.0)) {
      throw Error(ErrorCode::ConfigError, "pose noise sigmas must be >= 0");
    }
  }

  bool active() const noexcept { return sigma_rad_ > 0.0 || trans_sigma_ > 0.0; }

  void apply(std::vector<FrameObservation>& group) {
    if (!active()) return;
    Vec3 axis(unit_(rng_), unit_(rng_), unit_(rng_));
    while (axis.norm() < 1e-12) axis = Vec3(unit_(rng_), unit_(rng_), unit_(rng_));
    axis.normalize();
    const double angle = std::abs(sigma_rad_ * unit_(rng_));
    const Vec3 dt(trans_sigma_ * unit_(rng_), trans_sigma_ * unit_(rng_), trans_sigma_ * unit_(rng_));
    const Mat3 dr = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
    for (FrameObservation& o : group) {
      o.pose.rotation = dr * o.pose.rotation;
      o.pose.translation += dt;
    }
  }

 private:
  double sigma_rad_;
  double trans_sigma_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> unit_{0.0, 1.0};
};

/// Applies PoseNoise to every frame of a sequence in order; zero sigmas leave it untouched.
inline void perturb_poses(Sequence& seq, double rot_sigma_deg, double trans_sigma, std::uint64_t seed) {
  PoseNoise noise(rot_sigma_deg, trans_sigma, seed);
  for (auto& group : seq) noise.apply(group);
}

inline bool keep_frame(int frame_index, int interval) { return frame_index % (interval + 1) == 0; }

/// Keeps frames whose index is a multiple of interval + 1.
inline Sequence skip_frames(const Sequence& seq, int interval) {
  if (interval < 0) throw Error(ErrorCode::ConfigError, "skip interval must be >= 0");
  if (interval == 0) return seq;
  Sequence out;
  for (const auto& group : seq) {
    if (!group.empty() && keep_frame(group.front().frame_index, interval)) out.push_back(group);
  }
  return out;
}

}  // namespace ufm
