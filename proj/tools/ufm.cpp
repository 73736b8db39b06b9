// Command-line front end: run, eval, synth, oracle, bench.

#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ufm/ufm.hpp"

namespace {

// Settings shared by `run` and `bench`. Precedence: defaults < --config < --set < --<key>.
struct KeyOptions {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  bool print = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "config file of `key = value` lines")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override a key, KEY=VALUE (repeatable)");
    app->add_flag("--print-config", print, "print the effective configuration and exit");
    for (const ufm::ConfigKey& k : ufm::config_keys()) {
      app->add_option("--" + k.name, flags[k.name], k.help)->group("Keys");
    }
  }

  ufm::RunConfig resolve() const {
    ufm::RunConfig cfg;
    if (!config_file.empty()) ufm::load_config_file(cfg, config_file);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ufm::Error(ufm::ErrorCode::ConfigError, "--set expects KEY=VALUE, got '" + s + "'");
      ufm::set_key(cfg, ufm::detail::trim(s.substr(0, eq)), ufm::detail::trim(s.substr(eq + 1)));
    }
    for (const ufm::ConfigKey& k : ufm::config_keys()) {
      const std::string& v = flags.at(k.name);
      if (!v.empty()) ufm::set_key(cfg, k.name, v);
    }
    return cfg;
  }
};

int fail(const std::string& what) {
  std::cerr << "ufm: error: " << what << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiview-disagreement uncertainty mapping for depth sequences"};
  app.require_subcommand(1);

  KeyOptions run_keys;
  bool quiet = false;
  CLI::App* run = app.add_subcommand("run", "process a sequence (input=DIR) or scene (scene=FILE)");
  run_keys.attach(run);
  run->add_flag("-q,--quiet", quiet, "no per-frame log");

  ufm::EvalOptions eval_opt;
  CLI::App* eval = app.add_subcommand("eval", "score a run directory against ground truth");
  eval->add_option("run_dir", eval_opt.run_dir, "run directory")->required();
  eval->add_option("--gt", eval_opt.gt_root, "sequence directory with gt/ (default: the run's gt/)");
  eval->add_option("--out", eval_opt.out, "report directory (default: run_dir)");
  eval->add_option("--d_max", eval_opt.d_max, "depth validity limit (m)");

  std::string synth_scene, synth_out;
  std::int64_t synth_seed = -1;
  CLI::App* synth = app.add_subcommand("synth", "render a scene file into a sequence directory");
  synth->add_option("scene", synth_scene, "scene file")->required()->check(CLI::ExistingFile);
  synth->add_option("out", synth_out, "output directory")->required();
  synth->add_option("--noise_seed", synth_seed, "override the scene's noise seed");

  std::string oracle_cases = "ABCDE", oracle_out;
  int oracle_seeds = 100;
  std::uint64_t oracle_first = 1;
  CLI::App* oracle = app.add_subcommand("oracle", "disagreement-case harness, CSV output");
  oracle->add_option("--cases", oracle_cases, "case letters from ABCDE");
  oracle->add_option("--seeds", oracle_seeds, "seeds per case");
  oracle->add_option("--first_seed", oracle_first, "first seed");
  oracle->add_option("-o,--out", oracle_out, "CSV path (default stdout)");

  KeyOptions bench_keys;
  int bench_frames = 0;
  std::string bench_out;
  CLI::App* bench = app.add_subcommand("bench", "time every stage on a scene (scene=FILE)");
  bench_keys.attach(bench);
  bench->add_option("--frames", bench_frames, "frames to time (0 = all)");
  bench->add_option("-o,--json", bench_out, "write the JSON here as well");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const ufm::RunConfig cfg = run_keys.resolve();
      if (run_keys.print) {
        std::cout << ufm::print_config(cfg);
        return 0;
      }
      const auto summary = ufm::cmd_run(cfg, quiet ? nullptr : &std::cerr);
      std::cout << summary.dump(2) << '\n';
    } else if (*eval) {
      std::cout << ufm::cmd_eval(eval_opt).dump(2) << '\n';
    } else if (*synth) {
      ufm::cmd_synth(synth_scene, synth_out, synth_seed);
    } else if (*oracle) {
      if (oracle_out.empty()) {
        ufm::cmd_oracle(oracle_cases, oracle_seeds, oracle_first, std::cout);
      } else {
        std::ofstream out(oracle_out);
        if (!out) return fail("cannot write " + oracle_out);
        ufm::cmd_oracle(oracle_cases, oracle_seeds, oracle_first, out);
      }
    } else if (*bench) {
      const ufm::RunConfig cfg = bench_keys.resolve();
      if (bench_keys.print) {
        std::cout << ufm::print_config(cfg);
        return 0;
      }
      if (cfg.scene.empty()) return fail("bench needs a scene (--scene FILE)");
      ufm::BenchOptions opt;
      opt.scene = cfg.scene;
      opt.frames = bench_frames;
      opt.engine = cfg.engine;
      const auto j = ufm::cmd_bench(opt);
      std::cout << j.dump(2) << '\n';
      if (!bench_out.empty()) std::ofstream(bench_out) << j.dump(2) << '\n';
    }
  } catch (const ufm::Error& e) {
    return fail(e.what());
  } catch (const std::exception& e) {
    return fail(e.what());
  }
  return 0;
}
