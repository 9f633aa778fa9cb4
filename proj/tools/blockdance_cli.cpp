// Command-line front end: generate, bench, profile, train-policy and
// inspect-trace over one JSON run config.
//
// Exit codes: 0 success, 1 runtime failure, 2 config error.

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "blockdance/ada/policy.hpp"
#include "blockdance/harness/commands.hpp"
#include "blockdance/harness/run_config.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

std::map<std::string, std::string> read_env() {
  std::map<std::string, std::string> env;
  for (const char* name :
       {"BLOCKDANCE_SEED", "BLOCKDANCE_OUT", "BLOCKDANCE_THREADS"}) {
    if (const char* v = std::getenv(name)) env[name] = v;
  }
  return env;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace blockdance;

  CLI::App app{"Block-level feature caching for diffusion transformers"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  app.add_option("--config", config_path, "JSON run config")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Run seed (overrides env and file)");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--threads", threads, "Worker threads")
      ->check(CLI::PositiveNumber);

  auto* generate = app.add_subcommand("generate", "Run one sampler");
  auto* bench = app.add_subcommand("bench", "BlockDance-N sweep report");
  auto* profile = app.add_subcommand("profile", "Feature similarity reports");
  std::string from_log;
  profile->add_option("--from-log", from_log,
                      "Re-analyse an existing profile directory")
      ->check(CLI::ExistingDirectory);
  auto* train = app.add_subcommand("train-policy", "Train the decision network");
  auto* inspect = app.add_subcommand("inspect-trace", "Validate a run trace");
  std::string trace_path;
  inspect->add_option("trace", trace_path, "Trace JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (inspect->parsed()) {
      cli_inspect_trace(trace_path, std::cout);
      return kExitOk;
    }
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    Overrides flags;
    flags.seed = seed;
    flags.output_dir = out_dir;
    flags.threads = threads;
    apply_overrides(cfg, overrides_from_env(read_env()), flags);

    if (generate->parsed()) {
      cli_generate(cfg, std::cerr);
    } else if (bench->parsed()) {
      cli_bench(cfg, std::cerr);
    } else if (profile->parsed()) {
      cli_profile(cfg, std::cerr,
                  from_log.empty() ? std::nullopt
                                   : std::optional<std::filesystem::path>(from_log));
    } else if (train->parsed()) {
      cli_train_policy(cfg, std::cerr);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ScheduleError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
