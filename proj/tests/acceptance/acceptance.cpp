// Acceptance checks. Usage: ufm_acceptance <criterion 1..11>
// Prints one "criterion N: PASS|FAIL ..." line and exits nonzero on FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles/bures.hpp"
#include "oracles/sampling.hpp"
#include "ufm/ufm.hpp"

using namespace ufm;
namespace fs = std::filesystem;

namespace {

// Tolerances and limits, one place.
constexpr double kDiagTol = 1e-10;
constexpr double kSampledRelTol = 0.03;
constexpr int kSampledPoints = 10000;
constexpr double kMidpointTol = 1e-6;
constexpr double kObjectiveSlack = 1e-6;
constexpr double kZeroDisagreement = 1e-9;
constexpr double kShiftLo = 0.008, kShiftHi = 0.012;
constexpr double kCaseCFraction = 0.10;
constexpr int kCalibrationWinsNeeded = 9;
constexpr double kSelfEceQ = 0.01, kSelfEceDelta = 0.02;
constexpr std::size_t kMaxComponents = 2000;
constexpr double kMaxMemoryBytes = 0.5 * 1024 * 1024;
constexpr double kFrameBudgetMs = 100.0, kFrameHardMs = 250.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

fs::path room() { return fs::path(UFM_SOURCE_DIR) / "data" / "scenes" / "room.scene"; }

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome with_runtime(Outcome o, Clock::time_point t0, double limit_s) {
  const double t = seconds_since(t0);
  o.detail += " runtime=" + fmt(t) + "s (limit " + fmt(limit_s) + "s)";
  o.pass = o.pass && t < limit_s;
  return o;
}

// Criterion 1: closed form on diagonal pairs, discrete OT on full pairs.
Outcome criterion_1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> var(0.001, 0.5);
  double worst_diag = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec3 ma(n01(rng), n01(rng), n01(rng)), mb(n01(rng), n01(rng), n01(rng));
    const Vec3 va(var(rng), var(rng), var(rng)), vb(var(rng), var(rng), var(rng));
    const double got = w2_squared(Gaussian3{ma, va.asDiagonal(), 1.0, 0.0}, Gaussian3{mb, vb.asDiagonal(), 1.0, 0.0});
    worst_diag = std::max(worst_diag, std::abs(got - oracle::w2_squared_diagonal(ma, va, mb, vb)));
  }
  double worst_rel = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Vec3 ma(0.3 * n01(rng), 0.3 * n01(rng), 0.3 * n01(rng)), mb(0.3 * n01(rng), 0.3 * n01(rng), 0.3 * n01(rng));
    const Mat3 ca = oracle::random_spd(rng, 0.3, 0.01), cb = oracle::random_spd(rng, 0.3, 0.01);
    const double got = w2_squared(Gaussian3{ma, ca, 1.0, 0.0}, Gaussian3{mb, cb, 1.0, 0.0});
    const double ref = oracle::sampled_w2_squared(rng, ma, ca, mb, cb, kSampledPoints, 3e-3);
    worst_rel = std::max(worst_rel, std::abs(got - ref) / ref);
  }
  Outcome o;
  o.pass = worst_diag <= kDiagTol && worst_rel <= kSampledRelTol;
  o.detail = "diag_max_abs=" + fmt(worst_diag) + " (tol " + fmt(kDiagTol) + ") sampled_max_rel=" + fmt(worst_rel) +
             " (tol " + fmt(kSampledRelTol) + ")";
  return with_runtime(o, t0, 60.0);
}

Mat3 random_spd(std::mt19937_64& rng) { return oracle::random_spd(rng, 0.4, 0.02); }

// Criterion 2: two-point midpoint and local optimality for three points.
Outcome criterion_2() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::normal_distribution<double> n01;
  double worst_mid = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Gaussian3 a{Vec3(n01(rng), n01(rng), n01(rng)), random_spd(rng), 1.0, 0.0};
    const Gaussian3 b{Vec3(n01(rng), n01(rng), n01(rng)), random_spd(rng), 1.0, 0.0};
    const std::vector<Gaussian3> gs = {a, b};
    const std::vector<double> w = {0.5, 0.5};
    const BarycenterResult r = barycenter_n(gs, w);
    // Midpoint of the geodesic: push a through (I + T) / 2 with T the optimal map.
    const Mat3 ra = oracle::spd_sqrt(a.cov), ra_inv = ra.inverse();
    const Mat3 t = ra_inv * oracle::spd_sqrt(ra * b.cov * ra) * ra_inv;
    const Mat3 half = 0.5 * (Mat3::Identity() + t);
    const Mat3 cov = half * a.cov * half;
    const Vec3 mean = 0.5 * (a.mean + b.mean);
    worst_mid = std::max({worst_mid, (r.mean - mean).cwiseAbs().maxCoeff(), (r.cov - cov).cwiseAbs().maxCoeff()});
  }

  double worst_drop = -1e300;
  std::uniform_real_distribution<double> simplex(0.2, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Gaussian3> gs;
    std::vector<double> w;
    double wsum = 0.0;
    for (int i = 0; i < 3; ++i) {
      gs.push_back(Gaussian3{Vec3(n01(rng), n01(rng), n01(rng)), random_spd(rng), 1.0, 0.0});
      w.push_back(simplex(rng));
      wsum += w.back();
    }
    for (double& x : w) x /= wsum;
    const BarycenterResult r = barycenter_n(gs, w);
    auto objective = [&](const Vec3& m, const Mat3& c) {
      double f = 0.0;
      for (int i = 0; i < 3; ++i) f += w[i] * oracle::w2_squared(m, c, gs[i].mean, gs[i].cov);
      return f;
    };
    const double f0 = objective(r.mean, r.cov);
    // 40 perturbations per trial over 5 trials: 200 in all, at two radii.
    for (int p = 0; p < 40; ++p) {
      const double eps = p < 20 ? 1e-3 : 1e-2;
      const Vec3 dm(n01(rng), n01(rng), n01(rng));
      Mat3 ds;
      for (int k = 0; k < 9; ++k) ds(k) = n01(rng);
      ds = 0.5 * (ds + ds.transpose());
      Mat3 c = r.cov + eps * ds * r.cov.norm();
      Eigen::SelfAdjointEigenSolver<Mat3> es(c);
      if (es.eigenvalues().minCoeff() <= 0.0) c = r.cov;
      worst_drop = std::max(worst_drop, f0 - objective(r.mean + eps * dm, c));
    }
  }
  Outcome o;
  o.pass = worst_mid <= kMidpointTol && worst_drop <= kObjectiveSlack;
  o.detail = "midpoint_max_abs=" + fmt(worst_mid) + " (tol " + fmt(kMidpointTol) + ") max_objective_drop=" +
             fmt(worst_drop) + " (tol " + fmt(kObjectiveSlack) + ", 200 perturbations)";
  return with_runtime(o, t0, 60.0);
}

// Criterion 3: noise-free frames from one pose.
Outcome criterion_3() {
  const auto t0 = Clock::now();
  SceneSpec s = load_scene(room());
  s.noise = NoiseRegime{};
  const Pose pose = scene_trajectory(s)[0];
  EngineConfig cfg;
  cfg.prior_mean = 1e-4;
  Engine engine(cfg, s.intrinsics);
  double max_map = 0.0;
  for (int f = 0; f < 10; ++f) {
    const FrameObservation o = render_frame(s, pose, f, select_model(f, s.models));
    const FrameResult r = engine.process_frame(o);
    for (float x : r.mvd.pixels()) {
      if (!std::isnan(x)) max_map = std::max(max_map, static_cast<double>(x));
    }
  }
  const double max_m = engine.mixture().max_disagreement();
  // With every m_k = 0 the regression is a convex blend of the prior and zeros.
  const double bound = cfg.prior_mean * (1.0 + 1e-6);
  Outcome o;
  o.pass = max_m <= kZeroDisagreement && max_map <= bound;
  o.detail = "max_m=" + fmt(max_m) + " (tol " + fmt(kZeroDisagreement) + ") max_map=" + fmt(max_map) +
             " (bound mu0=" + fmt(cfg.prior_mean) + ") K=" + std::to_string(engine.mixture().size());
  return with_runtime(o, t0, 30.0);
}

// Criterion 4: second frame shifted 10 cm along depth.
Outcome criterion_4() {
  const auto t0 = Clock::now();
  SceneSpec s = load_scene(room());
  s.noise = NoiseRegime{};
  const Pose pose = scene_trajectory(s)[0];
  EngineConfig cfg;
  cfg.alpha = 1.0;
  Engine engine(cfg, s.intrinsics);
  engine.process_frame(render_frame(s, pose, 0, 1));
  FrameObservation shifted = render_frame(s, pose, 1, 1);
  for (float& d : shifted.depth.pixels()) {
    if (valid_depth(d)) d += 0.1f;
  }
  const FrameResult r = engine.process_frame(shifted);
  double sum = 0.0;
  std::size_t n = 0;
  for (float x : r.mvd.pixels()) {
    if (!std::isnan(x)) {
      sum += x;
      ++n;
    }
  }
  const double mean = n ? sum / static_cast<double>(n) : std::nan("");
  Outcome o;
  o.pass = n > 0 && mean >= kShiftLo && mean <= kShiftHi;
  o.detail = "mean_map=" + fmt(mean) + " over " + std::to_string(n) + " px (range [" + fmt(kShiftLo) + ", " +
             fmt(kShiftHi) + "])";
  return with_runtime(o, t0, 30.0);
}

// Criterion 5: disagreement-case orderings from the oracle CSV.
Outcome criterion_5() {
  const auto t0 = Clock::now();
  std::stringstream csv;
  cmd_oracle("ABCD", 100, 1, csv);
  std::map<char, std::vector<double>> mp, mg, ratio;
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    std::istringstream row(line);
    std::string c, seed, err, p, g;
    std::getline(row, c, ',');
    std::getline(row, seed, ',');
    std::getline(row, err, ',');
    std::getline(row, p, ',');
    std::getline(row, g, ',');
    const double vp = std::stod(p), vg = std::stod(g);
    mp[c[0]].push_back(vp);
    mg[c[0]].push_back(vg);
    ratio[c[0]].push_back(vg / std::max(vp, 1e-300));
  }
  const double pa = median(mp['A']), pb = median(mp['B']), pc = median(mp['C']);
  const double ga = median(mg['A']), gb = median(mg['B']), gc = median(mg['C']);
  const double rd = median(ratio['D']);
  const bool ab = pa < pb && ga < gb;
  const bool c = pc < kCaseCFraction * pb && gc < kCaseCFraction * gb;
  const bool d = rd > 1.0;
  Outcome o;
  o.pass = ab && c && d;
  o.detail = "m_p A/B=" + fmt(pa) + "/" + fmt(pb) + " m_g A/B=" + fmt(ga) + "/" + fmt(gb) + " C/B m_p=" +
             fmt(pc / pb) + " m_g=" + fmt(gc / gb) + " (tol " + fmt(kCaseCFraction) + ") D median m_g/m_p=" + fmt(rd);
  return with_runtime(o, t0, 300.0);
}

struct BenchmarkRun {
  double nll_total = 0.0, nll_base = 0.0;
  double ece_total = 0.0, ece_base = 0.0;
};

// The calibration benchmark: room scene in alternate mode, total map
// versus the aleatoric map alone.
BenchmarkRun run_benchmark(std::uint64_t seed, double rot_sigma_deg, int skip) {
  SceneSpec z = load_scene(room());
  z.noise.seed = seed;
  Sequence seq = render_sequence(z, InferenceMode::Alternate);
  perturb_poses(seq, rot_sigma_deg, 0.0, 1000 + seed);
  seq = skip_frames(seq, skip);
  Engine engine(EngineConfig{}, z.intrinsics);
  PixelSet total, base;
  for (const auto& frame : seq) {
    const FrameResult r = engine.process_frame(std::span<const FrameObservation>(frame));
    const FrameObservation& o = frame.front();
    total.append(o.depth, r.total, *o.ground_truth);
    base.append(o.depth, *o.aleatoric, *o.ground_truth);
  }
  return {nll(total), nll(base), ece_quantile(total).scalar, ece_quantile(base).scalar};
}

// Criterion 6: total beats aleatoric on NLL and quantile ECE.
Outcome criterion_6() {
  const auto t0 = Clock::now();
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const BenchmarkRun r = run_benchmark(seed, 0.0, 0);
    const bool win = r.nll_total < r.nll_base && r.ece_total < r.ece_base;
    wins += win;
    per_seed += win ? 'W' : 'L';
  }
  Outcome o;
  o.pass = wins >= kCalibrationWinsNeeded;
  o.detail = "wins=" + std::to_string(wins) + "/10 (need " + std::to_string(kCalibrationWinsNeeded) + ") seeds=" +
             per_seed;
  return with_runtime(o, t0, 600.0);
}

// Criterion 7: ground truth drawn from the predicted Gaussians.
Outcome criterion_7() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> depth(0.5, 8.0), sd(0.01, 0.8);
  std::normal_distribution<double> n01;
  PixelSet s;
  for (int i = 0; i < 100000; ++i) {
    const double d = depth(rng), sigma = sd(rng);
    s.append(d, sigma * sigma, d + sigma * n01(rng));
  }
  const double q = ece_quantile(s).scalar, dl = ece_delta(s).scalar;
  Outcome o;
  o.pass = q < kSelfEceQ && dl < kSelfEceDelta;
  o.detail = "ece_q=" + fmt(q) + " (tol " + fmt(kSelfEceQ) + ") ece_delta=" + fmt(dl) + " (tol " +
             fmt(kSelfEceDelta) + ")";
  return with_runtime(o, t0, 60.0);
}

// Criterion 8: mixture size and memory on the bundled room.
Outcome criterion_8() {
  const auto t0 = Clock::now();
  BenchOptions opt;
  opt.scene = room();
  const nlohmann::json j = cmd_bench(opt);
  const std::size_t k = j["components"].get<std::size_t>();
  const double bytes = j["memory_bytes"].get<double>();
  Outcome o;
  o.pass = k <= kMaxComponents && bytes <= kMaxMemoryBytes;
  o.detail = "K=" + std::to_string(k) + " (max " + std::to_string(kMaxComponents) + ") memory=" + fmt(bytes) +
             " B (max " + fmt(kMaxMemoryBytes) + ")";
  return with_runtime(o, t0, 120.0);
}

// Criterion 9: per-frame latency and the dominant stage.
Outcome criterion_9() {
  BenchOptions opt;
  opt.scene = room();
  opt.engine.gmr_stride = 1;
  const nlohmann::json j = cmd_bench(opt);
  const double total = j["timings"]["total"]["median_ms"].get<double>();
  const std::string largest = j["timings"]["largest_stage"].get<std::string>();
  Outcome o;
  o.pass = total <= kFrameBudgetMs && largest == "regress";
  o.detail = "median_total=" + fmt(total) + " ms (budget " + fmt(kFrameBudgetMs) + ", hard " + fmt(kFrameHardMs) +
             ") largest_stage=" + largest;
  for (const char* stage : {"segment", "correspond", "fuse", "regress"}) {
    o.detail += std::string(" ") + stage + "=" + fmt(j["timings"][stage]["median_ms"].get<double>());
  }
  if (total > kFrameHardMs) o.detail += " [exceeds hard limit]";
  return o;
}

// Criterion 10: NLL versus pose noise, improvement versus frame skipping.
Outcome criterion_10() {
  const auto t0 = Clock::now();
  std::vector<double> nll_median;
  for (double rot : {0.0, 1.0, 5.0}) {
    std::vector<double> v;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) v.push_back(run_benchmark(seed, rot, 0).nll_total);
    nll_median.push_back(median(v));
  }
  std::vector<double> gain_median;
  for (int skip : {0, 2, 4}) {
    std::vector<double> v;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const BenchmarkRun r = run_benchmark(seed, 0.0, skip);
      v.push_back(r.nll_base - r.nll_total);
    }
    gain_median.push_back(median(v));
  }
  const bool rot_ok = nll_median[0] <= nll_median[1] && nll_median[1] <= nll_median[2];
  const bool skip_ok = gain_median[0] > gain_median[1] && gain_median[1] > gain_median[2];
  Outcome o;
  o.pass = rot_ok && skip_ok;
  o.detail = "median_nll rot{0,1,5}=" + fmt(nll_median[0]) + "/" + fmt(nll_median[1]) + "/" + fmt(nll_median[2]) +
             (rot_ok ? " (non-decreasing)" : " (NOT non-decreasing)") + " median_gain skip{0,2,4}=" +
             fmt(gain_median[0]) + "/" + fmt(gain_median[1]) + "/" + fmt(gain_median[2]) +
             (skip_ok ? " (decreasing)" : " (NOT decreasing)");
  return with_runtime(o, t0, 900.0);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Criterion 11: two identical runs, byte-compared.
Outcome criterion_11() {
  const fs::path root = fs::temp_directory_path() / "ufm_acceptance_determinism";
  fs::remove_all(root);
  RunConfig cfg;
  cfg.scene = room();
  cfg.rot_sigma = 1.0;
  cfg.snapshot_every = 5;
  cfg.out = root / "a";
  cmd_run(cfg);
  cfg.out = root / "b";
  cmd_run(cfg);
  std::size_t compared = 0, differing = 0;
  for (const char* dir : {"maps", "mixture"}) {
    for (const auto& e : fs::directory_iterator(root / "a" / dir)) {
      const fs::path other = root / "b" / dir / e.path().filename();
      ++compared;
      if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++differing;
    }
  }
  fs::remove_all(root);
  Outcome o;
  o.pass = compared > 0 && differing == 0;
  o.detail = "files_compared=" + std::to_string(compared) + " differing=" + std::to_string(differing);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria = {criterion_1, criterion_2, criterion_3, criterion_4,
                                                          criterion_5, criterion_6, criterion_7, criterion_8,
                                                          criterion_9, criterion_10, criterion_11};
  const int n = argc > 1 ? std::atoi(argv[1]) : 0;
  if (n < 1 || n > static_cast<int>(criteria.size())) {
    std::cerr << "usage: ufm_acceptance <1.." << criteria.size() << ">\n";
    return 2;
  }
  Outcome o;
  try {
    o = criteria[static_cast<std::size_t>(n - 1)]();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << ' ' << o.detail << std::endl;
  return o.pass ? 0 : 1;
}
