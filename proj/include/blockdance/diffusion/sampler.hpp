#ifndef BLOCKDANCE_DIFFUSION_SAMPLER_HPP_
#define BLOCKDANCE_DIFFUSION_SAMPLER_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockdance/dit/model.hpp"
#include "blockdance/numeric/rng.hpp"

namespace blockdance {

struct NoiseSchedule {
  std::vector<Real> beta;
  std::vector<Real> alpha_bar;  // running product of (1 - beta)

  int steps_train() const { return static_cast<int>(beta.size()); }
  Real alpha_bar_at(int t) const;
};

NoiseSchedule make_linear_schedule(int steps_train, Real beta_start = 1e-4,
                                   Real beta_end = 2e-2);
/// Squared-cosine alpha_bar with offset s = 0.008; betas clipped to 0.999.
NoiseSchedule make_cosine_schedule(int steps_train);

struct SamplerPlan {
  std::vector<int> timesteps;  // strictly decreasing train timesteps
  Real eta = 0;

  int steps() const { return static_cast<int>(timesteps.size()); }
  void validate(const NoiseSchedule& sched) const;
};

/// Uniform stride: timestep j = round(j * steps_train / s), j = 0..s-1,
/// returned in descending order.
SamplerPlan make_uniform_plan(int s, int steps_train, Real eta = 0);

/// z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps.
MatrixR forward_diffuse(const MatrixR& z0, const MatrixR& eps, int t,
                        const NoiseSchedule& sched);
MatrixR forward_diffuse(const MatrixR& z0, int t, const NoiseSchedule& sched,
                        RngStream& rng);

struct SingularityError : std::domain_error {
  using std::domain_error::domain_error;
};

MatrixR predict_x0(const MatrixR& z_t, const MatrixR& eps, int t,
                   const NoiseSchedule& sched);

/// DDIM update from t to t_prev (t_prev = -1 means the clean endpoint with
/// alpha_bar = 1). Consumes RNG draws only when sigma_t > 0.
MatrixR ddim_step(const MatrixR& z_t, const MatrixR& eps, int t, int t_prev,
                  const NoiseSchedule& sched, Real eta, RngStream& rng);

Real ddim_sigma(int t, int t_prev, const NoiseSchedule& sched, Real eta);

enum class StepKind { kFull, kCache, kReuse };

std::string to_string(StepKind kind);
StepKind step_kind_from_string(const std::string& s);

struct StepRecord {
  int step_index = 0;  // 0-based position in the plan
  int train_timestep = 0;
  StepKind kind = StepKind::kFull;
  int blocks_executed = 0;
  std::uint64_t macs = 0;
  std::int64_t wall_nanos = 0;
};

struct RunTrace {
  std::vector<StepRecord> steps;

  std::uint64_t total_macs() const;
};

/// What an executor hands back for one denoising step.
struct StepOutput {
  MatrixR eps;
  StepKind kind = StepKind::kFull;
  int blocks_executed = 0;
  std::uint64_t macs = 0;
  std::vector<BlockFeature> tapped;
};

/// Computes the noise prediction for one step. Implementations may hold
/// per-run state (a feature cache), so one instance serves one run.
class StepExecutor {
 public:
  virtual ~StepExecutor() = default;
  virtual StepOutput run(int step_index, const MatrixR& z_t,
                         const Conditioning& cond) = 0;
};

/// Unmodified sampler: every step is a full forward.
class FullExecutor : public StepExecutor {
 public:
  explicit FullExecutor(const DitModel& model, std::set<int> taps = {})
      : model_(model), taps_(std::move(taps)) {}
  StepOutput run(int step_index, const MatrixR& z_t,
                 const Conditioning& cond) override;

 private:
  const DitModel& model_;
  std::set<int> taps_;
};

struct StepError : std::runtime_error {
  StepError(int step_index, const std::string& what)
      : std::runtime_error("step " + std::to_string(step_index) + ": " + what),
        step(step_index) {}
  int step;
};

struct SampleResult {
  MatrixR z0;
  RunTrace trace;
  std::vector<MatrixR> x0_predictions;  // one per step, if requested
  std::vector<std::vector<BlockFeature>> taps;  // per step
};

struct SampleOptions {
  bool keep_x0_predictions = false;
  bool measure_wall_time = false;
  int start_step = 0;  // resume position in the plan
  int stop_step = -1;  // exclusive end; -1 runs to the end of the plan
};

/// Runs the plan from `z_start` (z_T when start_step == 0), delegating eps
/// to `executor` at each step.
SampleResult sample(const DitModel& model, const SamplerPlan& plan,
                    const NoiseSchedule& sched, const VectorR& context,
                    StepExecutor& executor, const MatrixR& z_start,
                    RngStream& rng, const SampleOptions& options = {});

/// Serialized as {"steps":[{step_index, train_timestep, kind,
/// blocks_executed, macs, wall_nanos}, ...], "total_macs": n}.
std::string trace_to_json(const RunTrace& trace);
RunTrace trace_from_json(const std::string& text);

}  // namespace blockdance

#endif  // BLOCKDANCE_DIFFUSION_SAMPLER_HPP_
