#ifndef BLOCKDANCE_HARNESS_RUN_CONFIG_HPP_
#define BLOCKDANCE_HARNESS_RUN_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blockdance/ada/decision_net.hpp"
#include "blockdance/cache/engine.hpp"
#include "blockdance/diffusion/sampler.hpp"
#include "blockdance/dit/model.hpp"

namespace blockdance {

inline constexpr int kConfigSchemaVersion = 1;

struct SamplerSection {
  int steps = 30;
  int steps_train = 1000;
  std::string noise = "linear";  // linear | cosine
  Real beta_start = 1e-4;
  Real beta_end = 2e-2;
  Real eta = 0;
};

struct CacheSection {
  std::string mode = "blockdance";  // full | blockdance | deepcache | actions
  Real rho = 0.40;
  Real window_end = 0.95;
  int group_size = 2;
  int cutoff = 0;  // 0 = scaled default for the model depth
  std::string actions_file;
};

struct BenchSection {
  std::vector<int> group_sizes = {1, 2, 3, 4};
  std::vector<std::uint64_t> seeds;  // empty = the global seed
  bool analytic = false;  // MAC accounting only, no sampling
};

struct ProfileSection {
  int pca_k = 3;
};

struct PolicySection {
  Real rho = 0.40;
  Real lambda = 2.0;
  std::string quality = "proxy";  // proxy | exact
  Real lr = 1e-5;
  int batch_size = 16;
  int epochs = 100;
  int dataset = 16;
  int held_out = 8;
  bool baseline = true;
  int width = 32;
  int heads = 2;
  int pooled_tokens = 4;
  int head_hidden = 64;
  std::string resume;  // checkpoint stem; empty = fresh start
};

struct ReportSection {
  bool feature_log = false;
  bool timing = false;  // wall-clock fields are zero unless set
};

struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  std::string model_profile = "toy";  // toy | paper
  DitConfig model = DitConfig::toy();
  SamplerSection sampler;
  CacheSection cache;
  BenchSection bench;
  ProfileSection profile;
  PolicySection policy;
  ReportSection reports;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  int threads = 1;

  void validate() const;
  int cutoff() const;
  SchedulePolicy schedule_policy(int group_size) const;
  NoiseSchedule noise_schedule() const;
  SamplerPlan sampler_plan() const;
  DecisionNetConfig decision_net_config(int actions) const;

  /// Canonical JSON (sorted keys, every field explicit). Artifacts pass
  /// with_io = false so reruns into other directories stay byte-identical.
  std::string to_json(bool with_io = true) const;
  /// 64-bit hash of the canonical JSON minus output_dir and threads.
  std::uint64_t hash() const;
  std::string hash_tag() const;  // first 12 hex digits
};

/// Parses a config document. Unknown keys, wrong types or a missing or
/// unsupported schema_version raise ConfigError.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Overrides applied on top of the file: command-line flags win over
/// environment variables (BLOCKDANCE_SEED, BLOCKDANCE_OUT,
/// BLOCKDANCE_THREADS), which win over the file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<int> threads;
};

Overrides overrides_from_env(const std::map<std::string, std::string>& env);
void apply_overrides(RunConfig& cfg, const Overrides& env,
                     const Overrides& flags);

/// "%.17g" formatting; round-trips every double.
std::string format_real(Real v);

}  // namespace blockdance

#endif  // BLOCKDANCE_HARNESS_RUN_CONFIG_HPP_
