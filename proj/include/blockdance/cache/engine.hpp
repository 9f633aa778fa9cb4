#ifndef BLOCKDANCE_CACHE_ENGINE_HPP_
#define BLOCKDANCE_CACHE_ENGINE_HPP_

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockdance/diffusion/sampler.hpp"
#include "blockdance/dit/model.hpp"

namespace blockdance {

struct ScheduleError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Block index to cache for a model of the given depth: 20 of 28 scaled to
/// `depth`, clamped to [1, depth - 1].
int default_cutoff(int depth);

struct SchedulePolicy {
  int steps = 30;           // s
  Real rho = 0.40;          // cache-only prefix fraction
  Real window_end = 0.95;   // reuse window end fraction
  int group_size = 2;       // N
  int cutoff = 6;           // 1-based block whose output is cached

  void validate(int depth) const;

  /// PixArt-style window [40%, 95%].
  static SchedulePolicy blockdance(int steps, int group_size, int depth);
  /// DiT / Open-Sora window [25%, 95%].
  static SchedulePolicy blockdance_early(int steps, int group_size, int depth);
};

enum class ScheduleStep : char { kCache = 'C', kReuse = 'R' };

/// Per-step Cache/Reuse tags plus the window layout used for printing.
struct StepSchedule {
  std::vector<ScheduleStep> kinds;
  int prefix = 0;      // steps [0, prefix) are the cache-only prefix
  int window_end = 0;  // steps [window_end, s) are the cache-only suffix

  int steps() const { return static_cast<int>(kinds.size()); }
  int cache_count() const;
  int reuse_count() const;
  bool operator==(const StepSchedule&) const = default;
};

/// Throws ScheduleError when kinds[0] is not Cache or a Reuse has no
/// earlier Cache.
void validate_schedule(const StepSchedule& s);

StepSchedule build_schedule(const SchedulePolicy& policy);

/// First `rho_steps` Cache, then u_t == 1 -> Cache, u_t == 0 -> Reuse.
StepSchedule build_schedule_from_actions(const std::vector<int>& actions,
                                         int rho_steps);

/// Interval reuse over the whole run (no prefix, window to the end).
StepSchedule deepcache_style_schedule(int steps, int group_size);

/// Compact form "prefix|groups|suffix": prefix and suffix are runs of 'C',
/// groups inside the window are separated by single spaces, each group is
/// 'C' followed by 'R's (a leading group may be all 'R' when it continues
/// the prefix). Example: "CCCC|CR CR CR|CC".
std::string schedule_to_string(const StepSchedule& s);
StepSchedule schedule_from_string(const std::string& text);

/// Single-slot store for the most recent cache step's feature.
class FeatureCacheStore {
 public:
  bool has_entry() const { return entry_.has_value(); }
  const BlockFeature& entry() const;
  /// Step index of the cache step that produced the live entry.
  int source_step() const { return source_step_; }
  void update(BlockFeature feature, int step_index);
  std::uint64_t bytes() const;

 private:
  std::optional<BlockFeature> entry_;
  int source_step_ = -1;
};

struct ExecuteResult {
  ForwardResult forward;
  int blocks_executed = 0;
};

/// Cache: full forward tapping `cutoff`, store updated. Reuse: resume from
/// the stored feature under the current conditioning, store unchanged.
ExecuteResult execute_step(ScheduleStep kind, const DitModel& model,
                           const MatrixR& z_t, const Conditioning& cond,
                           int cutoff, FeatureCacheStore& store,
                           int step_index = 0);

/// Sampler executor following a StepSchedule.
class BlockDanceExecutor : public StepExecutor {
 public:
  BlockDanceExecutor(const DitModel& model, StepSchedule schedule, int cutoff,
                     std::set<int> extra_taps = {});

  StepOutput run(int step_index, const MatrixR& z_t,
                 const Conditioning& cond) override;

  const FeatureCacheStore& store() const { return store_; }
  FeatureCacheStore& store() { return store_; }
  /// For each step, the cache step whose feature it consumed (-1 for Cache).
  const std::vector<int>& reuse_sources() const { return reuse_sources_; }
  std::uint64_t peak_cache_bytes() const { return peak_bytes_; }

 private:
  const DitModel& model_;
  StepSchedule schedule_;
  int cutoff_;
  std::set<int> extra_taps_;
  FeatureCacheStore store_;
  std::vector<int> reuse_sources_;
  std::uint64_t peak_bytes_ = 0;
};

struct MacSummary {
  std::uint64_t total = 0;
  std::uint64_t baseline = 0;  // same plan, every step full
  Real saved_fraction = 0;     // 1 - total / baseline
};

MacSummary mac_report(const RunTrace& trace, const DitConfig& cfg);

/// Closed-form MACs of a schedule without running it.
MacSummary predicted_macs(const StepSchedule& schedule, const DitConfig& cfg,
                          int cutoff);

}  // namespace blockdance

#endif  // BLOCKDANCE_CACHE_ENGINE_HPP_
