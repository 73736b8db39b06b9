#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace ufm;
using testing_support::TempDir;

namespace {

/// The bundled room cut down to a few frames.
fs::path short_scene(const TempDir& dir, int frames) {
  std::ifstream in(testing_support::room_scene());
  std::stringstream text;
  text << in.rdbuf() << "frames = " << frames << '\n';
  const fs::path p = dir / "short.scene";
  std::ofstream(p) << text.str();
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Proc {
  int status = -1;
  std::string out;
};

Proc run_cli(const std::string& args) {
  const std::string cmd = std::string(UFM_CLI_PATH) + " " + args + " 2>&1";
  Proc p;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return p;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) p.out.append(buf.data(), n);
  p.status = pclose(pipe);
  return p;
}

}  // namespace

TEST(Commands, RunWritesArtifactsAndEvalReproducesReport) {
  TempDir dir("run");
  RunConfig cfg;
  cfg.scene = short_scene(dir, 4);
  cfg.out = dir / "out";
  cfg.snapshot_every = 2;
  cfg.emit_labels = true;
  const nlohmann::json summary = cmd_run(cfg);
  EXPECT_EQ(summary["frames"], 4);
  EXPECT_GT(summary["components"].get<int>(), 0);
  EXPECT_EQ(summary["memory_bytes"].get<std::size_t>(),
            summary["components"].get<std::size_t>() * GlobalMixture::kRecordBytes);
  EXPECT_DOUBLE_EQ(summary["total_mass"].get<double>(), summary["fused_support"].get<double>());
  for (const char* rel : {"manifest.json", "summary.json", "frames.csv", "report.json", "maps/000000.f32",
                          "maps/000003.f32.shape", "mvd/000001.f32", "pred/000002.f32", "gt/000003.f32",
                          "aleatoric/000000.f32", "labels/000001.png", "mixture/000001.txt", "mixture/000003.txt",
                          "mixture/final.txt", "curve_quantile_total.csv", "curve_delta_mvd.csv"}) {
    EXPECT_TRUE(fs::exists(cfg.out / rel)) << rel;
  }
  const nlohmann::json manifest = nlohmann::json::parse(slurp(cfg.out / "manifest.json"));
  EXPECT_EQ(manifest["config"]["snapshot_every"], "2");
  EXPECT_EQ(manifest["frames"].size(), 4u);
  EXPECT_EQ(read_mixture(cfg.out / "mixture" / "final.txt").size(), summary["components"].get<std::size_t>());

  std::ifstream csv(cfg.out / "frames.csv");
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 4);

  const nlohmann::json run_report = nlohmann::json::parse(slurp(cfg.out / "report.json"));
  EvalOptions eo;
  eo.run_dir = cfg.out;
  eo.out = dir / "eval";
  const nlohmann::json eval_report = cmd_eval(eo);
  for (const char* set : {"total", "mvd", "aleatoric"}) {
    EXPECT_EQ(eval_report[set]["pixel_count"], run_report[set]["pixel_count"]) << set;
    EXPECT_DOUBLE_EQ(eval_report[set]["nll"].get<double>(), run_report[set]["nll"].get<double>()) << set;
    EXPECT_DOUBLE_EQ(eval_report[set]["ece_q"].get<double>(), run_report[set]["ece_q"].get<double>()) << set;
  }
  EXPECT_TRUE(fs::exists(dir / "eval" / "report.json"));
}

TEST(Commands, RunIsDeterministic) {
  TempDir dir("determinism");
  RunConfig cfg;
  cfg.scene = short_scene(dir, 3);
  cfg.rot_sigma = 1.0;
  cfg.pose_seed = 5;
  cfg.out = dir / "a";
  cmd_run(cfg);
  cfg.out = dir / "b";
  cmd_run(cfg);
  for (const char* rel : {"maps/000000.f32", "maps/000002.f32", "mvd/000002.f32", "mixture/final.txt"}) {
    EXPECT_EQ(slurp(dir / "a" / rel), slurp(dir / "b" / rel)) << rel;
  }
}

TEST(Commands, RunFromSynthesizedSequenceMatchesSceneRun) {
  TempDir dir("synth");
  const fs::path scene = short_scene(dir, 3);
  cmd_synth(scene, dir / "seq");
  RunConfig a;
  a.scene = scene;
  a.out = dir / "a";
  cmd_run(a);
  RunConfig b;
  b.input = dir / "seq";
  b.out = dir / "b";
  cmd_run(b);
  // Poses pass through quaternion text, so agreement is to rounding, not bitwise.
  EXPECT_EQ(read_mixture(dir / "a" / "mixture" / "final.txt").size(),
            read_mixture(dir / "b" / "mixture" / "final.txt").size());
  const Image<float> ma = read_f32(dir / "a" / "maps" / "000002.f32");
  const Image<float> mb = read_f32(dir / "b" / "maps" / "000002.f32");
  ASSERT_TRUE(ma.same_shape(mb));
  for (std::size_t i = 0; i < ma.size(); ++i) {
    if (std::isnan(ma[i])) {
      EXPECT_TRUE(std::isnan(mb[i]));
    } else {
      EXPECT_NEAR(ma[i], mb[i], 1e-6 + 1e-4 * ma[i]);
    }
  }
}

TEST(Commands, SkipIntervalDropsFrames) {
  TempDir dir("skip");
  RunConfig cfg;
  cfg.scene = short_scene(dir, 5);
  cfg.skip_interval = 1;
  cfg.out = dir / "out";
  cfg.emit_report = false;
  EXPECT_EQ(cmd_run(cfg)["frames"], 3);
  EXPECT_TRUE(fs::exists(cfg.out / "maps" / "000004.f32"));
  EXPECT_FALSE(fs::exists(cfg.out / "maps" / "000001.f32"));
  EXPECT_FALSE(fs::exists(cfg.out / "report.json"));
}

TEST(Commands, EvalErrors) {
  TempDir dir("evalerr");
  EvalOptions eo;
  eo.run_dir = dir / "nothing";
  EXPECT_THROW(cmd_eval(eo), Error);

  RunConfig cfg;
  cfg.scene = short_scene(dir, 2);
  cfg.out = dir / "run";
  cmd_run(cfg);
  eo.run_dir = cfg.out;
  fs::remove(cfg.out / "gt" / "000001.f32");
  try {
    cmd_eval(eo);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    EXPECT_NE(e.message().find("000001"), std::string::npos);
  }
  fs::remove_all(cfg.out / "gt");
  EXPECT_THROW(cmd_eval(eo), Error);
}

TEST(Commands, RunRejectsBadConfig) {
  RunConfig cfg;
  EXPECT_THROW(cmd_run(cfg), Error);
  cfg.scene = testing_support::room_scene();
  cfg.engine.eta = 1.5;
  EXPECT_THROW(cmd_run(cfg), Error);
}

TEST(Commands, OracleCsv) {
  std::ostringstream a, b;
  EXPECT_EQ(cmd_oracle("AC", 3, 10, a), 6u);
  cmd_oracle("AC", 3, 10, b);
  EXPECT_EQ(a.str(), b.str());
  std::istringstream in(a.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "case,seed,error,m_p,m_g");
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 5), "A,10,");
  std::ostringstream sink;
  EXPECT_THROW(cmd_oracle("AZ", 1, 1, sink), Error);
  EXPECT_THROW(cmd_oracle("A", 0, 1, sink), Error);
}

TEST(Commands, BenchReportsStagesAndMemory) {
  TempDir dir("bench");
  BenchOptions opt;
  opt.scene = short_scene(dir, 4);
  const nlohmann::json j = cmd_bench(opt);
  EXPECT_EQ(j["frames"], 4);
  EXPECT_EQ(j["width"], 224);
  EXPECT_EQ(j["record_bytes"], 88);
  for (const char* stage : {"segment", "correspond", "fuse", "regress", "total"}) {
    EXPECT_GE(j["timings"][stage]["median_ms"].get<double>(), 0.0) << stage;
  }
  EXPECT_TRUE(j["timings"].contains("largest_stage"));
}

TEST(Commands, CliSmoke) {
  const Proc help = run_cli("--help");
  EXPECT_EQ(help.status, 0);
  EXPECT_NE(help.out.find("oracle"), std::string::npos);

  const Proc printed = run_cli("run --print-config --eta 0.4 --set alpha=0.5 --set eta=0.2");
  EXPECT_EQ(printed.status, 0);
  EXPECT_NE(printed.out.find("eta = 0.4\n"), std::string::npos);
  EXPECT_NE(printed.out.find("alpha = 0.5\n"), std::string::npos);

  const Proc unknown = run_cli("run --set nokey=1 --print-config");
  EXPECT_NE(unknown.status, 0);
  EXPECT_NE(unknown.out.find("unknown key 'nokey'"), std::string::npos);

  const Proc range = run_cli("run --eta 1.5 --scene " + testing_support::room_scene().string());
  EXPECT_NE(range.status, 0);
  EXPECT_NE(range.out.find("eta"), std::string::npos);

  const Proc oracle = run_cli("oracle --cases B --seeds 2");
  EXPECT_EQ(oracle.status, 0);
  EXPECT_EQ(oracle.out.rfind("case,seed,error,m_p,m_g\nB,1,", 0), 0u);

  EXPECT_NE(run_cli("").status, 0);
  EXPECT_NE(run_cli("bench").status, 0);
}
