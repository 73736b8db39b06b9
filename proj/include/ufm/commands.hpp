#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ufm/config.hpp"
#include "ufm/data_io.hpp"
#include "ufm/engine.hpp"
#include "ufm/metrics.hpp"
#include "ufm/reference_disagreement.hpp"
#include "ufm/segmentation.hpp"
#include "ufm/synthetic.hpp"
#include "ufm/text.hpp"

namespace ufm {

namespace fs = std::filesystem;

/// Frames of a sequence directory or a synthetic scene, after frame skipping.
class FrameSource {
 public:
  static FrameSource from_config(const RunConfig& cfg) {
    FrameSource src;
    src.mode_ = cfg.mode;
    src.models_ = cfg.engine.models;
    if (!cfg.input.empty()) {
      src.reader_.emplace(cfg.input, cfg.d_max);
      src.k_ = src.reader_->intrinsics();
      for (int f : src.reader_->frames()) {
        if (keep_frame(f, cfg.skip_interval)) src.frames_.push_back(f);
      }
    } else {
      SceneSpec s = load_scene(cfg.scene);
      if (cfg.noise_seed >= 0) s.noise.seed = static_cast<std::uint64_t>(cfg.noise_seed);
      s.d_max = std::min(s.d_max, cfg.d_max);
      src.traj_ = scene_trajectory(s);
      src.k_ = s.intrinsics;
      for (int f = 0; f < static_cast<int>(src.traj_.size()); ++f) {
        if (keep_frame(f, cfg.skip_interval)) src.frames_.push_back(f);
      }
      src.scene_ = std::move(s);
    }
    return src;
  }

  const CameraIntrinsics& intrinsics() const noexcept { return k_; }
  const std::vector<int>& frames() const noexcept { return frames_; }

  /// Observations for one frame: the scheduled model, or every model in multi mode.
  std::vector<FrameObservation> load(int frame) const {
    if (reader_) return reader_->load_frame(frame, mode_, models_);
    const SceneSpec& s = *scene_;
    std::vector<FrameObservation> out;
    if (mode_ == InferenceMode::Multi) {
      for (int m = 1; m <= s.models; ++m) out.push_back(render_frame(s, traj_[frame], frame, m));
    } else {
      out.push_back(render_frame(s, traj_[frame], frame, select_model(frame, std::min(models_, s.models))));
    }
    return out;
  }

 private:
  std::optional<SequenceReader> reader_;
  std::optional<SceneSpec> scene_;
  std::vector<Pose> traj_;
  CameraIntrinsics k_;
  std::vector<int> frames_;
  InferenceMode mode_ = InferenceMode::Alternate;
  int models_ = 1;
};

struct StageSummary {
  double median = 0.0;
  double mean = 0.0;
};

namespace detail {

inline StageSummary summarize(std::vector<double> v) {
  StageSummary s;
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(n);
  return s;
}

/// Per-stage medians/means and the stage with the largest median.
inline nlohmann::json timing_json(const std::vector<StageTimings>& t) {
  std::map<std::string, std::vector<double>> stages;
  for (const StageTimings& s : t) {
    stages["segment"].push_back(s.segment);
    stages["correspond"].push_back(s.correspond);
    stages["fuse"].push_back(s.fuse);
    stages["regress"].push_back(s.regress);
    stages["total"].push_back(s.total());
  }
  nlohmann::json j;
  std::string largest;
  double largest_median = -1.0;
  for (const auto& [name, values] : stages) {
    const StageSummary s = summarize(values);
    j[name] = {{"median_ms", s.median}, {"mean_ms", s.mean}};
    if (name != "total" && s.median > largest_median) {
      largest_median = s.median;
      largest = name;
    }
  }
  j["largest_stage"] = largest;
  return j;
}

/// Records written files relative to the run root for the manifest.
struct ArtifactWriter {
  fs::path root;
  std::vector<std::string> files;

  fs::path prepare(const fs::path& rel) {
    const fs::path p = root / rel;
    fs::create_directories(p.parent_path());
    files.push_back(rel.generic_string());
    return p;
  }

  void f32(const fs::path& rel, const Image<float>& img) {
    write_f32(prepare(rel), img);
    files.push_back(rel.generic_string() + ".shape");
  }

  void json(const fs::path& rel, const nlohmann::json& j) {
    std::ofstream out(prepare(rel));
    out << j.dump(2) << '\n';
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + (root / rel).string());
  }
};

}  // namespace detail

/// Pooled pixels per variance source ("total", "mvd", "aleatoric").
using EvalSets = std::map<std::string, PixelSet>;

/// Writes report.json and the total map's curve CSVs; returns the report.
inline nlohmann::json write_report(detail::ArtifactWriter& w, const EvalSets& sets, int frames) {
  nlohmann::json report;
  report["frames"] = frames;
  for (const auto& [name, set] : sets) {
    if (set.empty()) continue;
    const CalibrationReport r = evaluate(set);
    report[name] = to_json(r);
    write_curve_csv(w.prepare("curve_quantile_" + name + ".csv"), r.curve_quantile);
    write_curve_csv(w.prepare("curve_delta_" + name + ".csv"), r.curve_delta);
  }
  w.json("report.json", report);
  return report;
}

/// Processes a sequence and writes the run directory:
///   manifest.json, summary.json, frames.csv, maps/ (total), mvd/, pred/, gt/,
///   aleatoric/, mixture/ snapshots, labels/, report.json + curve CSVs.
/// Returns the summary document.
inline nlohmann::json cmd_run(const RunConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  cfg.validate_inputs();
  const FrameSource src = FrameSource::from_config(cfg);
  if (src.frames().empty()) throw Error(ErrorCode::ConfigError, "no frames to process");

  fs::create_directories(cfg.out);
  detail::ArtifactWriter w{cfg.out, {}};
  Engine engine(cfg.engine, src.intrinsics());
  PoseNoise pose_noise(cfg.rot_sigma, cfg.trans_sigma, cfg.pose_seed);

  EvalSets sets;
  std::vector<StageTimings> timings;
  std::int64_t skipped_pairs = 0;
  const fs::path frames_csv = w.prepare("frames.csv");
  std::ofstream csv(frames_csv);
  csv << "frame,model,observations,frame_components,appended,matched,pairs,skipped,components,mass,"
         "t_segment,t_correspond,t_fuse,t_regress\n";

  int processed = 0;
  for (int frame : src.frames()) {
    std::vector<FrameObservation> obs = src.load(frame);
    pose_noise.apply(obs);
    const FrameResult r = engine.process_frame(std::span<const FrameObservation>(obs));
    ++processed;
    timings.push_back(r.stats.timings);
    skipped_pairs += r.stats.fusion.skipped_pairs;

    const FrameStats& st = r.stats;
    csv << st.frame_index << ',' << st.model_id << ',' << st.observations << ',' << st.frame_components << ','
        << st.fusion.appended << ',' << st.fusion.matched_current << ',' << st.fusion.pairs << ','
        << st.fusion.skipped_pairs << ',' << st.global_components << ',' << detail::format_number(st.total_mass)
        << ',' << st.timings.segment << ',' << st.timings.correspond << ',' << st.timings.fuse << ','
        << st.timings.regress << '\n';

    const std::string stem = frame_stem(frame);
    const FrameObservation& first = obs.front();
    const std::optional<VarianceMap>& aleatoric = first.aleatoric;
    if (cfg.emit_maps) {
      w.f32(fs::path("maps") / (stem + ".f32"), r.total);
      w.f32(fs::path("mvd") / (stem + ".f32"), r.mvd);
      w.f32(fs::path("pred") / (stem + ".f32"), r.depth);
      if (first.ground_truth) w.f32(fs::path("gt") / (stem + ".f32"), *first.ground_truth);
      if (aleatoric && obs.size() == 1) w.f32(fs::path("aleatoric") / (stem + ".f32"), *aleatoric);
    }
    if (cfg.emit_labels) {
      Image<std::uint16_t> labels;
      segment_frame(first.depth, src.intrinsics(), cfg.engine.seg, &labels);
      write_png16(w.prepare(fs::path("labels") / (stem + ".png")), labels);
    }
    if (cfg.emit_mixture && cfg.snapshot_every > 0 && processed % cfg.snapshot_every == 0) {
      write_mixture(w.prepare(fs::path("mixture") / (stem + ".txt")), engine.mixture());
    }
    if (cfg.emit_report && first.ground_truth) {
      sets["total"].append(r.depth, r.total, *first.ground_truth);
      sets["mvd"].append(r.depth, r.mvd, *first.ground_truth);
      if (aleatoric && obs.size() == 1) sets["aleatoric"].append(r.depth, *aleatoric, *first.ground_truth);
    }
    if (log) {
      *log << "frame " << frame << ": " << st.frame_components << " components, K=" << st.global_components
           << ", " << st.timings.total() << " ms\n";
    }
  }
  csv.close();
  if (cfg.emit_mixture) write_mixture(w.prepare("mixture/final.txt"), engine.mixture());

  const GlobalMixture& mix = engine.mixture();
  nlohmann::json summary;
  summary["frames"] = processed;
  summary["components"] = mix.size();
  summary["total_mass"] = mix.total_mass();
  summary["max_disagreement"] = mix.max_disagreement();
  summary["fused_support"] = engine.fused_support();
  summary["discarded_support"] = engine.discarded_support();
  summary["skipped_pairs"] = skipped_pairs;
  summary["record_bytes"] = GlobalMixture::kRecordBytes;
  summary["memory_bytes"] = mix.memory_bytes();
  summary["timings"] = detail::timing_json(timings);
  if (!sets.empty()) {
    const nlohmann::json report = write_report(w, sets, processed);
    summary["nll"] = report["total"]["nll"];
    summary["ece_q"] = report["total"]["ece_q"];
  }
  w.json("summary.json", summary);

  nlohmann::json manifest;
  manifest["command"] = "run";
  manifest["config"] = config_json(cfg);
  manifest["frames"] = src.frames();
  w.files.push_back("manifest.json");
  manifest["files"] = w.files;
  std::ofstream(cfg.out / "manifest.json") << manifest.dump(2) << '\n';
  return summary;
}

struct EvalOptions {
  fs::path run_dir;
  fs::path gt_root;  // sequence directory holding gt/; empty = the run's own gt/
  fs::path out;      // empty = run_dir
  double d_max = kDefaultDMax;
};

/// Re-evaluates a run directory against ground truth. Every map frame needs a
/// prediction and a ground-truth map.
inline nlohmann::json cmd_eval(const EvalOptions& opt) {
  const fs::path maps = opt.run_dir / "maps";
  if (!fs::is_directory(maps)) throw Error(ErrorCode::IoError, "no maps/ under " + opt.run_dir.string());
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(maps)) {
    if (e.path().extension() == ".f32") stems.push_back(e.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw Error(ErrorCode::IoError, "no maps in " + maps.string());

  const fs::path gt_dir = (opt.gt_root.empty() ? opt.run_dir : opt.gt_root) / "gt";
  if (!fs::is_directory(gt_dir)) throw Error(ErrorCode::IoError, "no ground truth: " + gt_dir.string() + " missing");
  auto find_gt = [&](const std::string& stem) -> fs::path {
    for (const char* ext : {".f32", ".png"}) {
      if (fs::exists(gt_dir / (stem + ext))) return gt_dir / (stem + ext);
    }
    return {};
  };

  EvalSets sets;
  for (const std::string& stem : stems) {
    const fs::path gt_path = find_gt(stem);
    if (gt_path.empty()) {
      throw Error(ErrorCode::ShapeMismatch, "frame-count mismatch: no ground truth for frame " + stem);
    }
    const fs::path pred_path = opt.run_dir / "pred" / (stem + ".f32");
    if (!fs::exists(pred_path)) throw Error(ErrorCode::IoError, "missing prediction " + pred_path.string());
    const DepthMap gt = read_depth(gt_path, opt.d_max);
    const DepthMap pred = read_depth(pred_path, opt.d_max);
    sets["total"].append(pred, read_f32(maps / (stem + ".f32")), gt);
    for (const char* extra : {"mvd", "aleatoric"}) {
      const fs::path p = opt.run_dir / extra / (stem + ".f32");
      if (fs::exists(p)) sets[extra].append(pred, read_f32(p), gt);
    }
  }
  detail::ArtifactWriter w{opt.out.empty() ? opt.run_dir : opt.out, {}};
  fs::create_directories(w.root);
  return write_report(w, sets, static_cast<int>(stems.size()));
}

/// Renders a scene into the standard sequence layout (including gt/).
inline void cmd_synth(const fs::path& scene, const fs::path& out, std::int64_t noise_seed = -1) {
  SceneSpec s = load_scene(scene);
  if (noise_seed >= 0) s.noise.seed = static_cast<std::uint64_t>(noise_seed);
  write_dataset(s, out);
}

/// Runs the disagreement-case harness; writes "case,seed,error,m_p,m_g" rows.
/// Returns the number of data rows.
inline std::size_t cmd_oracle(const std::string& cases, int seeds, std::uint64_t first_seed, std::ostream& csv) {
  if (seeds < 1) throw Error(ErrorCode::ConfigError, "seeds must be >= 1");
  if (cases.empty()) throw Error(ErrorCode::ConfigError, "no cases given");
  std::vector<CaseLabel> labels;
  for (char c : cases) labels.push_back(case_from_char(c));
  csv << "case,seed,error,m_p,m_g\n";
  std::size_t rows = 0;
  for (CaseLabel label : labels) {
    const CaseScenario sc = CaseScenario::standard(label);
    for (int i = 0; i < seeds; ++i) {
      const CaseRecord r = run_case(sc, first_seed + static_cast<std::uint64_t>(i));
      csv << to_char(r.label) << ',' << r.seed << ',' << detail::format_number(r.error) << ','
          << detail::format_number(r.m_p) << ',' << detail::format_number(r.m_g) << '\n';
      ++rows;
    }
  }
  return rows;
}

struct BenchOptions {
  fs::path scene;
  int frames = 0;  // 0 = whole trajectory
  EngineConfig engine;
};

/// Times every stage over a synthetic scene and estimates mixture memory.
inline nlohmann::json cmd_bench(const BenchOptions& opt) {
  RunConfig cfg;
  cfg.scene = opt.scene;
  cfg.engine = opt.engine;
  cfg.validate();
  const FrameSource src = FrameSource::from_config(cfg);
  Engine engine(cfg.engine, src.intrinsics());
  std::vector<StageTimings> timings;
  std::size_t peak_components = 0;
  for (int frame : src.frames()) {
    if (opt.frames > 0 && static_cast<int>(timings.size()) >= opt.frames) break;
    const std::vector<FrameObservation> obs = src.load(frame);
    timings.push_back(engine.process_frame(std::span<const FrameObservation>(obs)).stats.timings);
    peak_components = std::max(peak_components, engine.mixture().size());
  }
  nlohmann::json j;
  j["frames"] = timings.size();
  j["width"] = src.intrinsics().width;
  j["height"] = src.intrinsics().height;
  j["gmr_stride"] = cfg.engine.gmr_stride;
  j["components"] = engine.mixture().size();
  j["record_bytes"] = GlobalMixture::kRecordBytes;
  j["memory_bytes"] = peak_components * GlobalMixture::kRecordBytes;
  j["memory_mb"] = static_cast<double>(peak_components * GlobalMixture::kRecordBytes) / (1024.0 * 1024.0);
  j["timings"] = detail::timing_json(timings);
  return j;
}

}  // namespace ufm
