#include "blockdance/ada/policy.hpp"

#include <cmath>

#include "blockdance/numeric/ops.hpp"

namespace blockdance {

namespace {

// log(1 + exp(x)) without overflow.
Real softplus(Real x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

void check_actions(const std::vector<int>& u, Index n) {
  if (static_cast<Index>(u.size()) != n) {
    throw DimensionError("actions length != policy length");
  }
  for (int a : u) {
    if (a != 0 && a != 1) throw DimensionError("actions must be binary");
  }
}

}  // namespace

Real bernoulli_logprob(const VectorR& logits, const std::vector<int>& u) {
  check_actions(u, logits.size());
  Real lp = 0;
  for (Index t = 0; t < logits.size(); ++t) {
    // ln m = -softplus(-l), ln(1 - m) = -softplus(l)
    lp -= u[static_cast<std::size_t>(t)] == 1 ? softplus(-logits(t))
                                              : softplus(logits(t));
  }
  return lp;
}

Real bernoulli_logprob_from_probs(const VectorR& m, const std::vector<int>& u) {
  check_actions(u, m.size());
  Real lp = 0;
  for (Index t = 0; t < m.size(); ++t) {
    lp += u[static_cast<std::size_t>(t)] == 1 ? std::log(m(t))
                                              : std::log1p(-m(t));
  }
  return lp;
}

std::vector<int> sample_actions(const VectorR& m, RngStream& rng) {
  std::vector<int> u(static_cast<std::size_t>(m.size()));
  for (Index t = 0; t < m.size(); ++t) {
    u[static_cast<std::size_t>(t)] = rng.next_uniform() < m(t) ? 1 : 0;
  }
  return u;
}

std::vector<int> greedy_actions(const VectorR& m) {
  std::vector<int> u(static_cast<std::size_t>(m.size()));
  for (Index t = 0; t < m.size(); ++t) {
    u[static_cast<std::size_t>(t)] = m(t) >= 0.5 ? 1 : 0;
  }
  return u;
}

PolicyOutput sample_policy(const DecisionNet& net, const MatrixR& z_rho,
                           const VectorR& context, RngStream& rng) {
  const VectorR logits = net.logits(z_rho, context);
  PolicyOutput out;
  out.m = logits.unaryExpr([](Real x) { return sigmoid(x); });
  out.u = sample_actions(out.m, rng);
  out.logprob = bernoulli_logprob(logits, out.u);
  return out;
}

Reward compute_reward(const std::vector<int>& u, Real quality_score,
                      const RewardConfig& cfg) {
  if (u.empty()) throw DimensionError("compute_reward: empty action vector");
  int cache_steps = 0;
  for (int a : u) {
    if (a != 0 && a != 1) throw DimensionError("actions must be binary");
    cache_steps += a;
  }
  Reward r;
  r.compute = 1.0 - static_cast<Real>(cache_steps) / static_cast<Real>(u.size());
  r.quality = quality_score;
  r.total = r.compute + cfg.lambda * r.quality;
  return r;
}

Real quality_proxy(const MatrixR& z0_policy, const MatrixR& z0_reference) {
  if (z0_policy.rows() != z0_reference.rows() ||
      z0_policy.cols() != z0_reference.cols() || z0_reference.size() == 0) {
    throw DimensionError("quality_proxy: shape mismatch");
  }
  const Real n = static_cast<Real>(z0_reference.size());
  const Real rmse = std::sqrt((z0_policy - z0_reference).squaredNorm() / n);
  Real scale = std::sqrt(z0_reference.squaredNorm() / n);
  if (scale == 0) scale = 1.0;
  return 1.0 - std::min(1.0, rmse / scale);
}

Real exact_match_quality(const MatrixR& z0_policy,
                         const MatrixR& z0_reference) {
  if (z0_policy.rows() != z0_reference.rows() ||
      z0_policy.cols() != z0_reference.cols()) {
    return 0.0;
  }
  return z0_policy == z0_reference ? 1.0 : 0.0;
}

DecisionParams logprob_grad(const DecisionNet& net, const MatrixR& z_rho,
                            const VectorR& context, const std::vector<int>& u) {
  DecisionTape tape;
  const VectorR logits = net.logits(z_rho, context, &tape);
  check_actions(u, logits.size());
  VectorR dlogits(logits.size());
  for (Index t = 0; t < logits.size(); ++t) {
    dlogits(t) = u[static_cast<std::size_t>(t)] - sigmoid(logits(t));
  }
  DecisionParams grad = net.params().zeros_like();
  net.backward(tape, dlogits, grad);
  return grad;
}

DecisionParams reinforce_grad(const DecisionNet& net,
                              const std::vector<Rollout>& batch,
                              Real baseline) {
  if (batch.empty()) throw TrainingError("reinforce_grad: empty batch");
  DecisionParams grad = net.params().zeros_like();
  const Real inv_b = 1.0 / static_cast<Real>(batch.size());
  for (const auto& r : batch) {
    if (!std::isfinite(r.reward)) {
      throw TrainingError("reinforce_grad: non-finite reward");
    }
    const Real advantage = r.reward - baseline;
    if (advantage == 0) continue;
    DecisionTape tape;
    const VectorR logits = net.logits(r.z_rho, r.context, &tape);
    check_actions(r.u, logits.size());
    VectorR dlogits(logits.size());
    for (Index t = 0; t < logits.size(); ++t) {
      dlogits(t) = advantage * inv_b *
                   (r.u[static_cast<std::size_t>(t)] - sigmoid(logits(t)));
    }
    net.backward(tape, dlogits, grad);
  }
  return grad;
}

void AdamAscent::step(DecisionParams& params, const DecisionParams& grad) {
  VectorR w = flatten(params);
  const VectorR g = flatten(grad);
  if (w.size() != m_.size()) throw DimensionError("adam: size mismatch");
  ++t_;
  m_ = cfg_.beta1 * m_ + (1 - cfg_.beta1) * g;
  v_ = cfg_.beta2 * v_ + (1 - cfg_.beta2) * g.cwiseProduct(g);
  const Real c1 = 1 - std::pow(cfg_.beta1, static_cast<Real>(t_));
  const Real c2 = 1 - std::pow(cfg_.beta2, static_cast<Real>(t_));
  for (Index i = 0; i < w.size(); ++i) {
    w(i) += cfg_.lr * (m_(i) / c1) / (std::sqrt(v_(i) / c2) + cfg_.eps);
  }
  assign_flat(params, w);
}

void AdamAscent::restore(std::int64_t t, VectorR m, VectorR v) {
  if (m.size() != m_.size() || v.size() != v_.size()) {
    throw DimensionError("adam restore: size mismatch");
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace blockdance
