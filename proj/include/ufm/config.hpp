#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ufm/common.hpp"
#include "ufm/data_io.hpp"
#include "ufm/engine.hpp"
#include "ufm/text.hpp"

namespace ufm {

/// Everything a `run` invocation needs, settable by key.
struct RunConfig {
  std::filesystem::path input;  // sequence directory
  std::filesystem::path scene;  // or a synthetic scene file
  std::filesystem::path out = "ufm_run";
  EngineConfig engine;
  InferenceMode mode = InferenceMode::Alternate;
  double d_max = kDefaultDMax;

  // Ablations
  double rot_sigma = 0.0;    // degrees
  double trans_sigma = 0.0;  // meters
  int skip_interval = 0;
  std::uint64_t pose_seed = 0;
  std::int64_t noise_seed = -1;  // overrides the scene's noise seed when >= 0

  // Artifacts
  bool emit_maps = true;
  bool emit_mixture = true;
  int snapshot_every = 0;  // 0 = final snapshot only
  bool emit_labels = false;
  bool emit_report = true;

  void validate() const {
    engine.validate();
    if (!(d_max > 0.0)) throw Error(ErrorCode::ConfigError, "d_max must be > 0");
    if (!(rot_sigma >= 0.0)) throw Error(ErrorCode::ConfigError, "rot_sigma must be >= 0");
    if (!(trans_sigma >= 0.0)) throw Error(ErrorCode::ConfigError, "trans_sigma must be >= 0");
    if (skip_interval < 0) throw Error(ErrorCode::ConfigError, "skip_interval must be >= 0");
    if (snapshot_every < 0) throw Error(ErrorCode::ConfigError, "snapshot_every must be >= 0");
    if (out.empty()) throw Error(ErrorCode::ConfigError, "out must not be empty");
  }

  /// Run-specific checks: exactly one input source.
  void validate_inputs() const {
    if (input.empty() == scene.empty()) {
      throw Error(ErrorCode::ConfigError, "exactly one of input and scene must be set");
    }
  }
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<bool(RunConfig&, const std::string&)> set;  // false on unparsable text
  std::function<std::string(const RunConfig&)> get;
};

namespace detail {

template <typename T>
ConfigKey number_key(std::string name, std::string help, T RunConfig::*field) {
  return {std::move(name), std::move(help),
          [field](RunConfig& c, const std::string& v) { return parse_number(v, c.*field); },
          [field](const RunConfig& c) { return format_number(c.*field); }};
}

template <typename T>
ConfigKey engine_key(std::string name, std::string help, T EngineConfig::*field) {
  return {std::move(name), std::move(help),
          [field](RunConfig& c, const std::string& v) { return parse_number(v, c.engine.*field); },
          [field](const RunConfig& c) { return format_number(c.engine.*field); }};
}

template <typename T>
ConfigKey seg_key(std::string name, std::string help, T SegmentationConfig::*field) {
  return {std::move(name), std::move(help),
          [field](RunConfig& c, const std::string& v) { return parse_number(v, c.engine.seg.*field); },
          [field](const RunConfig& c) { return format_number(c.engine.seg.*field); }};
}

inline ConfigKey bool_key(std::string name, std::string help, bool RunConfig::*field) {
  return {std::move(name), std::move(help),
          [field](RunConfig& c, const std::string& v) { return parse_bool(v, c.*field); },
          [field](const RunConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

inline ConfigKey path_key(std::string name, std::string help, std::filesystem::path RunConfig::*field) {
  return {std::move(name), std::move(help),
          [field](RunConfig& c, const std::string& v) {
            c.*field = v;
            return true;
          },
          [field](const RunConfig& c) { return (c.*field).string(); }};
}

}  // namespace detail

/// All keys in print order.
inline const std::vector<ConfigKey>& config_keys() {
  using namespace detail;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back(path_key("input", "sequence directory", &RunConfig::input));
    k.push_back(path_key("scene", "synthetic scene file (instead of input)", &RunConfig::scene));
    k.push_back(path_key("out", "output run directory", &RunConfig::out));
    k.push_back({"mode", "alternate | multi",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "alternate") c.mode = InferenceMode::Alternate;
                   else if (v == "multi") c.mode = InferenceMode::Multi;
                   else return false;
                   return true;
                 },
                 [](const RunConfig& c) {
                   return std::string(c.mode == InferenceMode::Multi ? "multi" : "alternate");
                 }});
    k.push_back(number_key("d_max", "readings deeper than this are invalid (m)", &RunConfig::d_max));

    k.push_back(engine_key("eta", "Bhattacharyya match threshold", &EngineConfig::eta));
    k.push_back(engine_key("occlusion_overlap", "overlap above which a farther candidate is occluded",
                           &EngineConfig::occlusion_overlap));
    k.push_back(engine_key("match_ratio", "drop candidates below ratio * best overlap", &EngineConfig::match_ratio));
    k.push_back(engine_key("match_angle_deg", "max normal angle between matched planar Gaussians",
                           &EngineConfig::match_angle_deg));
    k.push_back(engine_key("alpha", "EMA coefficient, 1 disables smoothing", &EngineConfig::alpha));
    k.push_back(engine_key("prior_mean", "GMR prior disagreement mu0 (m^2)", &EngineConfig::prior_mean));
    k.push_back(engine_key("prior_weight", "GMR prior mass pi0", &EngineConfig::prior_weight));
    k.push_back(engine_key("prior_spread", "GMR prior spread Sigma0 (unused by the conditional mean)",
                           &EngineConfig::prior_spread));
    k.push_back(engine_key("models", "number of alternated depth models", &EngineConfig::models));
    k.push_back(engine_key("gmr_stride", "GMR pixel stride", &EngineConfig::gmr_stride));
    k.push_back({"overlap_weighting", "weight geodesic steps by overlap share",
                 [](RunConfig& c, const std::string& v) { return parse_bool(v, c.engine.overlap_weighting); },
                 [](const RunConfig& c) { return std::string(c.engine.overlap_weighting ? "true" : "false"); }});
    k.push_back(engine_key("z_min", "near-plane guard (m)", &EngineConfig::z_min));
    k.push_back(engine_key("gmr_cutoff", "GMR Mahalanobis truncation radius", &EngineConfig::gmr_cutoff));

    k.push_back(seg_key("seg.tau0", "base discontinuity threshold (m)", &SegmentationConfig::tau0));
    k.push_back(seg_key("seg.tau1", "quadratic threshold coefficient (1/m)", &SegmentationConfig::tau1));
    k.push_back(seg_key("seg.min_support", "minimum pixels per Gaussian", &SegmentationConfig::min_support));
    k.push_back(seg_key("seg.max_components", "per-frame component cap", &SegmentationConfig::max_components));
    k.push_back(seg_key("seg.merge_angle_deg", "scanline-to-plane angle tolerance",
                        &SegmentationConfig::merge_angle_deg));
    k.push_back(seg_key("seg.thickness_floor", "constant covariance floor (m^2)",
                        &SegmentationConfig::thickness_floor));
    k.push_back(seg_key("seg.thickness_scale", "depth-adaptive floor scale", &SegmentationConfig::thickness_scale));
    k.push_back(seg_key("seg.thickness_gate", "max cluster thickness in units of tau(d)",
                        &SegmentationConfig::thickness_gate));

    k.push_back(number_key("rot_sigma", "pose rotation noise (deg)", &RunConfig::rot_sigma));
    k.push_back(number_key("trans_sigma", "pose translation noise (m)", &RunConfig::trans_sigma));
    k.push_back(number_key("skip_interval", "frames dropped between kept frames", &RunConfig::skip_interval));
    k.push_back(number_key("pose_seed", "seed of the pose noise", &RunConfig::pose_seed));
    k.push_back(number_key("noise_seed", "scene noise seed override (-1 keeps the scene's)", &RunConfig::noise_seed));

    k.push_back(bool_key("emit_maps", "write per-frame uncertainty maps", &RunConfig::emit_maps));
    k.push_back(bool_key("emit_mixture", "write mixture snapshots", &RunConfig::emit_mixture));
    k.push_back(number_key("snapshot_every", "snapshot period in frames (0 = final only)", &RunConfig::snapshot_every));
    k.push_back(bool_key("emit_labels", "write segmentation label images", &RunConfig::emit_labels));
    k.push_back(bool_key("emit_report", "evaluate against ground truth when present", &RunConfig::emit_report));
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_key(const std::string& name) {
  for (const ConfigKey& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

/// Sets one key from text. Range checks happen in RunConfig::validate.
inline void set_key(RunConfig& cfg, const std::string& name, const std::string& value) {
  const ConfigKey* k = find_key(name);
  if (!k) throw Error(ErrorCode::ConfigError, "unknown key '" + name + "'");
  if (!k->set(cfg, value)) throw Error(ErrorCode::ConfigError, name + ": cannot parse '" + value + "'");
}

/// Applies "key = value" lines; '#' starts a comment.
inline void apply_config_stream(RunConfig& cfg, std::istream& in, const std::string& source) {
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = detail::trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ParseError, source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set_key(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(e.code(), source + ":" + std::to_string(lineno) + ": " + e.message());
    }
  }
}

inline void load_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  apply_config_stream(cfg, in, path.string());
}

/// Every key with its effective value, in the config-file grammar.
inline std::string print_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const ConfigKey& k : config_keys()) os << k.name << " = " << k.get(cfg) << '\n';
  return os.str();
}

inline nlohmann::json config_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const ConfigKey& k : config_keys()) j[k.name] = k.get(cfg);
  return j;
}

}  // namespace ufm
