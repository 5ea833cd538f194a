#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "fognite/error.hpp"
#include "fognite/report.hpp"
#include "fognite/scenario.hpp"
#include "fognite/sim.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kRunFailure = 1;
constexpr int kConfigError = 2;

fognite::ScenarioConfig load(const std::string& path) {
  return path.empty() ? fognite::ScenarioConfig{} : fognite::parse_config_file(path);
}

std::filesystem::path output_dir(const fognite::ScenarioConfig& cfg, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* root = std::getenv("FOGNITE_OUT_ROOT"); root && *root) {
    return std::filesystem::path(root) / cfg.output_dir;
  }
  return cfg.output_dir;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fog-cloud smart-grid control loop simulator"};
  app.require_subcommand(1);

  std::string config_path, out;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> schedulers;
  bool quick = false;

  auto* run = app.add_subcommand("run", "Run seeded experiments and write metrics, journals and reports");
  run->add_option("--config", config_path, "Scenario config (JSON); defaults apply when omitted");
  run->add_option("--seed", seeds, "Seed(s), overriding the config list");
  run->add_option("--scheduler", schedulers, "fognite, focca_baseline or random (repeatable)");
  run->add_option("--out", out, "Output directory (default: $FOGNITE_OUT_ROOT/<output_dir>)");
  run->add_flag("--quick", quick, "Reduced workload and training budget");

  std::string run_dir;
  auto* rep = app.add_subcommand("report", "Render the comparison table and error charts of a run directory");
  rep->add_option("dir", run_dir, "Run directory")->required();

  auto* check = app.add_subcommand("validate-config", "Validate a scenario config and print it with defaults");
  check->add_option("--config", config_path, "Scenario config (JSON)")->required();
  check->add_flag("--quick", quick, "Apply the quick preset before printing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  fognite::ScenarioConfig cfg;
  std::vector<fognite::sim::SchedulerKind> kinds;
  try {
    if (*rep) {
      std::cout << fognite::report::report(run_dir);
      return kOk;
    }
    cfg = load(config_path);
    if (quick) cfg = fognite::quick_preset(cfg);
    if (!seeds.empty()) cfg.seeds = seeds;
    if (auto problems = fognite::validate_config(cfg); !problems.empty()) throw fognite::ConfigErrors(problems);
    if (*check) {
      std::cout << fognite::emit_config(cfg).dump(2) << '\n';
      return kOk;
    }
    if (schedulers.empty()) schedulers = {"fognite", "focca_baseline"};
    for (const auto& s : schedulers) kinds.push_back(fognite::sim::parse_scheduler(s));
  } catch (const fognite::ConfigErrors& e) {
    std::cerr << e.what() << '\n';
    return kConfigError;
  } catch (const fognite::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRunFailure;
  }

  try {
    const auto dir = output_dir(cfg, out);
    auto result = fognite::report::run(cfg, kinds, dir, &std::cerr);
    if (result.failed) {
      std::cerr << "one or more runs failed; see " << (dir / "report.json").string() << '\n';
      return kRunFailure;
    }
    std::cout << fognite::report::report(dir);
    std::cout << "artifacts in " << dir.string() << '\n';
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return kRunFailure;
  }
}
