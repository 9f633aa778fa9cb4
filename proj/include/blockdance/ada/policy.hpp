#ifndef BLOCKDANCE_ADA_POLICY_HPP_
#define BLOCKDANCE_ADA_POLICY_HPP_

#include <functional>
#include <stdexcept>
#include <vector>

#include "blockdance/ada/decision_net.hpp"
#include "blockdance/numeric/rng.hpp"

namespace blockdance {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bernoulli policy over s - rho cache (1) / reuse (0) decisions.
struct PolicyOutput {
  VectorR m;
  std::vector<int> u;
  Real logprob = 0;
};

/// log prod_t m_t^u_t (1 - m_t)^(1 - u_t), computed from logits for
/// stability.
Real bernoulli_logprob(const VectorR& logits, const std::vector<int>& u);
Real bernoulli_logprob_from_probs(const VectorR& m, const std::vector<int>& u);

/// u_t ~ Bernoulli(m_t), one uniform draw per entry.
std::vector<int> sample_actions(const VectorR& m, RngStream& rng);
/// u_t = 1 iff m_t >= 0.5.
std::vector<int> greedy_actions(const VectorR& m);

PolicyOutput sample_policy(const DecisionNet& net, const MatrixR& z_rho,
                           const VectorR& context, RngStream& rng);

struct RewardConfig {
  Real lambda = 2.0;
};

struct Reward {
  Real total = 0;    // R = C + lambda Q
  Real compute = 0;  // C = 1 - sum(u) / (s - rho)
  Real quality = 0;  // Q
};

Reward compute_reward(const std::vector<int>& u, Real quality_score,
                      const RewardConfig& cfg);

/// 1 - min(1, RMSE / RMS(reference)); scale falls back to 1 for a zero
/// reference.
Real quality_proxy(const MatrixR& z0_policy, const MatrixR& z0_reference);

/// 1 when the outputs are bitwise equal, else 0.
Real exact_match_quality(const MatrixR& z0_policy, const MatrixR& z0_reference);

struct Rollout {
  MatrixR z_rho;
  VectorR context;
  std::vector<int> u;
  Real reward = 0;
};

/// (1/B) sum_i (R_i - baseline) grad log pi(u_i | z_rho_i, c_i).
DecisionParams reinforce_grad(const DecisionNet& net,
                              const std::vector<Rollout>& batch,
                              Real baseline = 0);

/// Gradient of log pi(u | z_rho, c) alone.
DecisionParams logprob_grad(const DecisionNet& net, const MatrixR& z_rho,
                            const VectorR& context, const std::vector<int>& u);

struct AdamConfig {
  Real lr = 1e-5;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

/// Adam over the flattened parameter vector, ascending the objective.
class AdamAscent {
 public:
  AdamAscent() = default;
  AdamAscent(AdamConfig cfg, Index size)
      : cfg_(cfg), m_(VectorR::Zero(size)), v_(VectorR::Zero(size)) {}

  void step(DecisionParams& params, const DecisionParams& grad);

  const AdamConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }
  const VectorR& first_moment() const { return m_; }
  const VectorR& second_moment() const { return v_; }
  void restore(std::int64_t t, VectorR m, VectorR v);

 private:
  AdamConfig cfg_;
  VectorR m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace blockdance

#endif  // BLOCKDANCE_ADA_POLICY_HPP_
