#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "ufm/common.hpp"
#include "ufm/engine.hpp"
#include "ufm/geometry.hpp"
#include "ufm/image.hpp"
#include "ufm/observation.hpp"

namespace ufm {

namespace fs = std::filesystem;

inline constexpr double kDefaultDMax = 20.0;

/// Six-digit zero-padded frame stem, e.g. 000042.
inline std::string frame_stem(int index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

// ---------------------------------------------------------------------------
// 16-bit PNG depth (millimeters, 0 = invalid)

namespace detail {

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadGuard() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteGuard() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline float swap_bytes(float x) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(x);
  u = (u >> 24) | ((u >> 8) & 0xFF00u) | ((u << 8) & 0xFF0000u) | (u << 24);
  return std::bit_cast<float>(u);
}

// The libpng calls live in these helpers so that a longjmp never crosses an
// object with a destructor. Each returns false on a libpng error.

inline bool png_read_header(png_structp png, png_infop info, std::FILE* f, png_uint_32* w, png_uint_32* h,
                            int* bit_depth, int* color) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  *w = png_get_image_width(png, info);
  *h = png_get_image_height(png, info);
  *bit_depth = png_get_bit_depth(png, info);
  *color = png_get_color_type(png, info);
  return true;
}

inline bool png_read_rows(png_structp png, png_infop info, png_bytep* rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  if constexpr (std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);
  png_read_image(png, rows);
  png_read_end(png, nullptr);
  return true;
}

inline bool png_write_rows(png_structp png, png_infop info, std::FILE* f, png_uint_32 w, png_uint_32 h,
                           png_bytep* rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, f);
  png_set_IHDR(png, info, w, h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if constexpr (std::endian::native == std::endian::little) png_set_swap(png);
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  return true;
}

}  // namespace detail

/// Reads a single-channel 16-bit PNG into raw values.
inline Image<std::uint16_t> read_png16(const fs::path& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw Error(ErrorCode::CorruptDepthFile, "cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error(ErrorCode::CorruptDepthFile, "not a PNG file: " + path.string());
  }
  detail::PngReadGuard g;
  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!g.png) throw Error(ErrorCode::InternalError, "png_create_read_struct failed");
  g.info = png_create_info_struct(g.png);
  if (!g.info) throw Error(ErrorCode::InternalError, "png_create_info_struct failed");

  png_uint_32 w = 0, h = 0;
  int bit_depth = 0, color = 0;
  if (!detail::png_read_header(g.png, g.info, f.get(), &w, &h, &bit_depth, &color)) {
    throw Error(ErrorCode::CorruptDepthFile, "malformed PNG: " + path.string());
  }
  if (bit_depth != 16 || color != PNG_COLOR_TYPE_GRAY) {
    throw Error(ErrorCode::CorruptDepthFile, "expected 16-bit grayscale PNG: " + path.string());
  }
  if (w == 0 || h == 0 || w > 100000 || h > 100000) {
    throw Error(ErrorCode::CorruptDepthFile, "implausible PNG size: " + path.string());
  }
  Image<std::uint16_t> img(static_cast<int>(w), static_cast<int>(h), 0);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = reinterpret_cast<png_bytep>(&img(0, static_cast<int>(y)));
  if (!detail::png_read_rows(g.png, g.info, rows.data())) {
    throw Error(ErrorCode::CorruptDepthFile, "malformed PNG: " + path.string());
  }
  return img;
}

inline void write_png16(const fs::path& path, const Image<std::uint16_t>& img) {
  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  detail::PngWriteGuard g;
  g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!g.png) throw Error(ErrorCode::InternalError, "png_create_write_struct failed");
  g.info = png_create_info_struct(g.png);
  if (!g.info) throw Error(ErrorCode::InternalError, "png_create_info_struct failed");
  std::vector<png_bytep> rows(img.height());
  for (int y = 0; y < img.height(); ++y) {
    rows[y] = const_cast<png_bytep>(reinterpret_cast<const png_byte*>(&img(0, y)));
  }
  if (!detail::png_write_rows(g.png, g.info, f.get(), img.width(), img.height(), rows.data())) {
    throw Error(ErrorCode::IoError, "PNG encoding failed: " + path.string());
  }
}

inline DepthMap depth_from_millimeters(const Image<std::uint16_t>& mm) {
  DepthMap d(mm.width(), mm.height(), kInvalid);
  for (std::size_t i = 0; i < mm.size(); ++i) {
    if (mm[i] != 0) d[i] = static_cast<float>(mm[i] * 0.001);
  }
  return d;
}

inline Image<std::uint16_t> depth_to_millimeters(const DepthMap& d) {
  Image<std::uint16_t> mm(d.width(), d.height(), 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!valid_depth(d[i])) continue;
    const double v = std::round(static_cast<double>(d[i]) * 1000.0);
    mm[i] = static_cast<std::uint16_t>(std::clamp(v, 0.0, 65535.0));
  }
  return mm;
}

// ---------------------------------------------------------------------------
// Raw float32 maps with a "H W" sidecar

inline fs::path shape_sidecar(const fs::path& path) { return fs::path(path.string() + ".shape"); }

inline Image<float> read_f32(const fs::path& path) {
  std::ifstream side(shape_sidecar(path));
  if (!side) throw Error(ErrorCode::CorruptDepthFile, "missing shape sidecar for " + path.string());
  long long h = 0, w = 0;
  if (!(side >> h >> w) || h <= 0 || w <= 0 || h > 100000 || w > 100000) {
    throw Error(ErrorCode::CorruptDepthFile, "bad shape sidecar for " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::CorruptDepthFile, "cannot open " + path.string());
  Image<float> img(static_cast<int>(w), static_cast<int>(h), 0.0f);
  const auto bytes = static_cast<std::streamsize>(img.size() * sizeof(float));
  in.read(reinterpret_cast<char*>(img.pixels().data()), bytes);
  if (in.gcount() != bytes || in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::CorruptDepthFile, "size does not match sidecar: " + path.string());
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (float& x : img.pixels()) x = detail::swap_bytes(x);
  }
  return img;
}

inline void write_f32(const fs::path& path, const Image<float>& img) {
  {
    std::ofstream side(shape_sidecar(path));
    side << img.height() << ' ' << img.width() << '\n';
    if (!side) throw Error(ErrorCode::IoError, "cannot write " + shape_sidecar(path).string());
  }
  std::ofstream out(path, std::ios::binary);
  if constexpr (std::endian::native == std::endian::big) {
    std::vector<float> tmp(img.pixels().begin(), img.pixels().end());
    for (float& x : tmp) x = detail::swap_bytes(x);
    out.write(reinterpret_cast<const char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * sizeof(float)));
  } else {
    out.write(reinterpret_cast<const char*>(img.pixels().data()),
              static_cast<std::streamsize>(img.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

/// Loads a depth map in either encoding, chosen by extension. Readings beyond
/// d_max become invalid (NaN).
inline DepthMap read_depth(const fs::path& path, double d_max = kDefaultDMax) {
  DepthMap d = path.extension() == ".png" ? depth_from_millimeters(read_png16(path)) : read_f32(path);
  for (float& x : d.pixels()) {
    if (!valid_depth(x) || x > d_max) x = kInvalid;
  }
  return d;
}

inline VarianceMap read_variance(const fs::path& path) {
  VarianceMap v = read_f32(path);
  for (float x : v.pixels()) {
    if (x < 0.0f || std::isinf(x)) throw Error(ErrorCode::CorruptDepthFile, "negative variance in " + path.string());
  }
  return v;
}

// ---------------------------------------------------------------------------
// Intrinsics and poses

inline CameraIntrinsics read_intrinsics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingIntrinsics, "cannot open " + path.string());
  CameraIntrinsics k;
  if (!(in >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height)) {
    throw Error(ErrorCode::MissingIntrinsics, "expected 'fx fy cx cy width height' in " + path.string());
  }
  if (!k.valid()) throw Error(ErrorCode::MissingIntrinsics, "invalid intrinsics in " + path.string());
  return k;
}

inline void write_intrinsics(const fs::path& path, const CameraIntrinsics& k) {
  std::ofstream out(path);
  out << std::setprecision(17) << k.fx << ' ' << k.fy << ' ' << k.cx << ' ' << k.cy << ' ' << k.width << ' '
      << k.height << '\n';
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

/// Parses "index tx ty tz qx qy qz qw" lines (camera-to-world). Blank lines and
/// lines starting with '#' are skipped.
inline std::map<int, Pose> read_poses(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::PoseCountMismatch, "cannot open " + path.string());
  std::map<int, Pose> poses;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream is(line);
    int index = 0;
    double t[3], q[4];
    if (!(is >> index >> t[0] >> t[1] >> t[2] >> q[0] >> q[1] >> q[2] >> q[3])) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": malformed pose line");
    }
    const Eigen::Quaterniond quat(q[3], q[0], q[1], q[2]);
    if (std::abs(quat.norm() - 1.0) > 1e-3) {
      throw Error(ErrorCode::ParseError,
                  path.string() + ":" + std::to_string(lineno) + ": quaternion is not unit length");
    }
    if (!poses.emplace(index, Pose::from_quaternion(Vec3(t[0], t[1], t[2]), quat)).second) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": duplicate frame index");
    }
  }
  return poses;
}

inline void write_poses(const fs::path& path, const std::vector<std::pair<int, Pose>>& poses) {
  std::ofstream out(path);
  out << std::setprecision(17);
  for (const auto& [index, pose] : poses) {
    Eigen::Quaterniond q(pose.rotation);
    q.normalize();
    out << index << ' ' << pose.translation.x() << ' ' << pose.translation.y() << ' ' << pose.translation.z() << ' '
        << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// Sequence directory

enum class InferenceMode { Alternate, Multi };

/// Lazy reader over root/{intrinsics.txt, poses.txt, model_N/, aleatoric/, epistemic/, gt/}.
class SequenceReader {
 public:
  explicit SequenceReader(const fs::path& root, double d_max = kDefaultDMax) : root_(root), d_max_(d_max) {
    intrinsics_ = read_intrinsics(root / "intrinsics.txt");
    if (!fs::exists(root / "poses.txt")) {
      throw Error(ErrorCode::PoseCountMismatch, "missing " + (root / "poses.txt").string());
    }
    poses_ = read_poses(root / "poses.txt");
    while (fs::is_directory(root / ("model_" + std::to_string(models_ + 1)))) ++models_;
    if (models_ == 0) throw Error(ErrorCode::CorruptDepthFile, "no model_1/ depth directory under " + root.string());

    for (const auto& entry : fs::directory_iterator(root / "model_1")) {
      const fs::path p = entry.path();
      if (p.extension() != ".png" && p.extension() != ".f32") continue;
      const std::string stem = p.stem().string();
      if (stem.size() != 6 || !std::all_of(stem.begin(), stem.end(), ::isdigit)) continue;
      frames_.push_back(std::stoi(stem));
    }
    std::sort(frames_.begin(), frames_.end());
    frames_.erase(std::unique(frames_.begin(), frames_.end()), frames_.end());
    if (frames_.empty()) throw Error(ErrorCode::CorruptDepthFile, "no depth frames in model_1/");
    if (poses_.size() != frames_.size()) {
      throw Error(ErrorCode::PoseCountMismatch, std::to_string(poses_.size()) + " poses for " +
                                                    std::to_string(frames_.size()) + " depth frames");
    }
    for (int f : frames_) {
      if (!poses_.count(f)) throw Error(ErrorCode::PoseCountMismatch, "no pose for frame " + std::to_string(f));
    }
  }

  const CameraIntrinsics& intrinsics() const noexcept { return intrinsics_; }
  const std::vector<int>& frames() const noexcept { return frames_; }
  int models() const noexcept { return models_; }
  const fs::path& root() const noexcept { return root_; }

  bool has_ground_truth(int frame) const { return !find_map("gt", frame).empty(); }

  /// Loads one frame as produced by one model.
  FrameObservation load(int frame, int model_id) const {
    if (model_id < 1 || model_id > models_) {
      throw Error(ErrorCode::ConfigError, "model " + std::to_string(model_id) + " not present");
    }
    const std::string dir = "model_" + std::to_string(model_id);
    const fs::path depth_path = find_map(dir, frame);
    if (depth_path.empty()) {
      throw Error(ErrorCode::CorruptDepthFile, "missing " + (root_ / dir / frame_stem(frame)).string());
    }
    FrameObservation obs;
    obs.frame_index = frame;
    obs.model_id = model_id;
    obs.pose = poses_.at(frame);
    obs.depth = read_depth(depth_path, d_max_);
    if (obs.depth.width() != intrinsics_.width || obs.depth.height() != intrinsics_.height) {
      throw Error(ErrorCode::CorruptDepthFile, "size differs from intrinsics: " + depth_path.string());
    }
    if (auto p = find_map("aleatoric", frame); !p.empty()) obs.aleatoric = read_variance(p);
    if (auto p = find_map("epistemic", frame); !p.empty()) obs.epistemic = read_variance(p);
    if (auto p = find_map("gt", frame); !p.empty()) obs.ground_truth = read_depth(p, d_max_);
    try {
      obs.check_shapes();
    } catch (const Error& e) {
      throw Error(ErrorCode::CorruptDepthFile, e.message() + " (frame " + std::to_string(frame) + ")");
    }
    return obs;
  }

  /// Observations for one frame: the scheduled model, or every model in multi mode.
  std::vector<FrameObservation> load_frame(int frame, InferenceMode mode, int n_models) const {
    std::vector<FrameObservation> out;
    if (mode == InferenceMode::Multi) {
      for (int m = 1; m <= models_; ++m) out.push_back(load(frame, m));
    } else {
      out.push_back(load(frame, select_model(frame, std::min(n_models, models_))));
    }
    return out;
  }

 private:
  fs::path find_map(const std::string& dir, int frame) const {
    for (const char* ext : {".png", ".f32"}) {
      fs::path p = root_ / dir / (frame_stem(frame) + ext);
      if (fs::exists(p)) return p;
    }
    return {};
  }

  fs::path root_;
  double d_max_;
  CameraIntrinsics intrinsics_;
  std::map<int, Pose> poses_;
  std::vector<int> frames_;
  int models_ = 0;
};

/// Eagerly loads the whole sequence (one entry per frame, each holding one or
/// more observations).
inline std::vector<std::vector<FrameObservation>> load_sequence(const fs::path& root,
                                                                InferenceMode mode = InferenceMode::Alternate,
                                                                int n_models = 1, double d_max = kDefaultDMax) {
  const SequenceReader reader(root, d_max);
  std::vector<std::vector<FrameObservation>> out;
  for (int f : reader.frames()) out.push_back(reader.load_frame(f, mode, n_models));
  return out;
}

// ---------------------------------------------------------------------------
// Mixture snapshots

inline constexpr const char* kMixtureHeader = "# ufm-mixture v1 fields: mean[3] cov[9] weight m created_frame";

inline void write_mixture(const fs::path& path, const GlobalMixture& m) {
  std::FILE* raw = std::fopen(path.c_str(), "w");
  if (!raw) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  detail::FilePtr f(raw);
  std::fprintf(raw, "%s\n# count %zu\n", kMixtureHeader, m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Gaussian3& g = m.components[i];
    for (int r = 0; r < 3; ++r) std::fprintf(raw, "%.17g ", g.mean[r]);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) std::fprintf(raw, "%.17g ", g.cov(r, c));
    }
    std::fprintf(raw, "%.17g %.17g %d\n", g.weight, g.disagreement, m.created_frame[i]);
  }
}

inline GlobalMixture read_mixture(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMixtureHeader) {
    throw Error(ErrorCode::ParseError, path.string() + ": not a mixture snapshot");
  }
  GlobalMixture m;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    Vec3 mean;
    Mat3 cov;
    double weight = 0.0, dis = 0.0;
    int created = 0;
    bool ok = static_cast<bool>(is >> mean[0] >> mean[1] >> mean[2]);
    for (int r = 0; r < 3 && ok; ++r) {
      for (int c = 0; c < 3 && ok; ++c) ok = static_cast<bool>(is >> cov(r, c));
    }
    ok = ok && (is >> weight >> dis >> created);
    if (!ok) throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": bad record");
    Gaussian3 g;
    g.mean = mean;
    g.cov = cov;
    g.weight = weight;
    g.disagreement = dis;
    m.append(g, created);
  }
  return m;
}

}  // namespace ufm
