#ifndef BLOCKDANCE_HARNESS_COMMANDS_HPP_
#define BLOCKDANCE_HARNESS_COMMANDS_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockdance/harness/run_config.hpp"

namespace blockdance {

/// A failure after the config was accepted; maps to exit code 1.
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Paths written by a command, in write order.
struct Artifacts {
  std::vector<std::filesystem::path> files;
};

/// Runs one sampler with the executor selected by cache.mode. Writes
/// `<stem>.z0.tensor`, `<stem>.trace.json`, `<stem>.summary.json` and, when
/// reports.feature_log is set, `<stem>.features/`. The stem is
/// `<mode>_<hash12>_s<seed>`.
Artifacts cli_generate(const RunConfig& cfg, std::ostream& log);

struct BenchRow {
  int group_size = 0;
  std::uint64_t seed = 0;
  std::string schedule;
  std::uint64_t total_macs = 0;
  std::uint64_t baseline_macs = 0;
  Real saved_fraction = 0;
  std::int64_t wall_nanos = 0;
  std::optional<Real> ssim;  // absent without a same-seed baseline run
};

/// BlockDance-N sweep over bench.group_sizes x seeds. Rows are sorted by
/// (N, seed). Analytic mode fills MAC columns only.
std::vector<BenchRow> bench_rows(const RunConfig& cfg);
std::string bench_csv(const std::vector<BenchRow>& rows);
Artifacts cli_bench(const RunConfig& cfg, std::ostream& log);

/// Full run tapping every block. Writes the feature log, the x0 sequence,
/// the L2 surface, the cosine matrix at the cutoff block, SSIM between
/// consecutive x0 predictions and a PCA projection of the cutoff feature at
/// each step. With `from_log` the sampler is skipped and the analyses are
/// recomputed from an existing feature log.
Artifacts cli_profile(const RunConfig& cfg, std::ostream& log,
                      const std::optional<std::filesystem::path>& from_log =
                          std::nullopt);

/// Trains the decision network. Writes a per-epoch curve CSV, a checkpoint
/// after every epoch, and a held-out evaluation comparing the greedy policy
/// with BlockDance-N for N in bench.group_sizes.
Artifacts cli_train_policy(const RunConfig& cfg, std::ostream& log);

/// Validates a trace file and prints a summary.
void cli_inspect_trace(const std::filesystem::path& trace, std::ostream& out);

/// Reads whitespace-separated 0/1 actions.
std::vector<int> read_actions_file(const std::filesystem::path& path);

}  // namespace blockdance

#endif  // BLOCKDANCE_HARNESS_COMMANDS_HPP_
