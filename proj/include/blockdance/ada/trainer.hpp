#ifndef BLOCKDANCE_ADA_TRAINER_HPP_
#define BLOCKDANCE_ADA_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "blockdance/ada/policy.hpp"
#include "blockdance/cache/engine.hpp"
#include "blockdance/diffusion/sampler.hpp"

namespace blockdance {

/// One prompt-like instance: the latent after the cache-only prefix, the
/// feature cached on the last prefix step, and the all-full result.
struct PolicyInstance {
  int id = 0;
  MatrixR z_rho;
  VectorR context;
  BlockFeature prefix_cache;
  MatrixR z0_reference;
};

/// Runs the remaining s - rho steps of a sampler for a given action vector.
class PolicyEnvironment {
 public:
  PolicyEnvironment(const DitModel& model, NoiseSchedule sched,
                    SamplerPlan plan, int rho_steps, int cutoff);

  int actions() const { return plan_.steps() - rho_steps_; }
  int rho_steps() const { return rho_steps_; }
  int cutoff() const { return cutoff_; }
  const DitModel& model() const { return model_; }
  const SamplerPlan& plan() const { return plan_; }

  PolicyInstance prepare(int id, const MatrixR& z_T,
                         const VectorR& context) const;

  /// Seeded synthetic instance: z_T ~ N(0, I), context ~ N(0, I).
  PolicyInstance synthetic(int id, std::uint64_t seed) const;

  SampleResult rollout(const PolicyInstance& inst,
                       const std::vector<int>& u) const;

 private:
  const DitModel& model_;
  NoiseSchedule sched_;
  SamplerPlan plan_;
  int rho_steps_;
  int cutoff_;
};

using QualityFn = std::function<Real(const MatrixR& z0_policy,
                                     const MatrixR& z0_reference)>;

struct TrainHyper {
  int epochs = 100;
  int batch_size = 16;
  AdamConfig adam;
  bool use_baseline = true;
  Real baseline_decay = 0.9;
  std::uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  Real mean_reward = 0;
  Real mean_compute = 0;
  Real mean_quality = 0;
  Real mean_cache_steps = 0;           // mean sum(u) of sampled actions
  Real mean_expected_cache_steps = 0;  // mean sum(m) after the epoch
};

/// Mean sum(m) of the policy over a set of instances.
Real expected_cache_steps(const DecisionNet& net,
                          const std::vector<PolicyInstance>& instances);

class PolicyTrainer {
 public:
  PolicyTrainer(const PolicyEnvironment& env,
                std::vector<PolicyInstance> dataset, RewardConfig reward,
                QualityFn quality, TrainHyper hyper, DecisionNet net);

  /// One pass over the dataset in a seeded per-epoch order.
  EpochStats run_epoch();

  const DecisionNet& net() const { return net_; }
  const TrainHyper& hyper() const { return hyper_; }
  int epochs_done() const { return epoch_; }
  std::uint64_t rollouts_done() const { return rollouts_; }
  Real baseline() const { return baseline_; }
  const AdamAscent& optimizer() const { return adam_; }
  const std::vector<PolicyInstance>& dataset() const { return dataset_; }

  struct ResumeState {
    int epoch = 0;
    std::uint64_t rollouts = 0;
    Real baseline = 0;
    bool baseline_ready = false;
    std::int64_t adam_steps = 0;
    VectorR adam_m, adam_v;
  };
  ResumeState resume_state() const;
  void restore(const DecisionParams& params, const ResumeState& state);

  /// Quality of an action vector on an instance; memoized because eta = 0
  /// rollouts are deterministic.
  Real quality_of(const PolicyInstance& inst, const std::vector<int>& u);

 private:
  const PolicyEnvironment& env_;
  std::vector<PolicyInstance> dataset_;
  RewardConfig reward_;
  QualityFn quality_;
  TrainHyper hyper_;
  DecisionNet net_;
  AdamAscent adam_;
  int epoch_ = 0;
  std::uint64_t rollouts_ = 0;
  Real baseline_ = 0;
  bool baseline_ready_ = false;
  std::map<std::pair<int, std::vector<int>>, Real> quality_memo_;
};

/// Policy checkpoint: `<stem>.tensor` is a rank-1 dump of the flattened
/// weights followed by Adam's moments; `<stem>.json` holds the network
/// config, hyperparameters and training position.
void save_policy_checkpoint(const std::filesystem::path& stem,
                            const PolicyTrainer& trainer);

struct LoadedPolicy {
  DecisionNet net;
  std::optional<PolicyTrainer::ResumeState> state;
};
LoadedPolicy load_policy_checkpoint(const std::filesystem::path& stem);

}  // namespace blockdance

#endif  // BLOCKDANCE_ADA_TRAINER_HPP_
