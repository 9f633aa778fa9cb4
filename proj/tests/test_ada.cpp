#include <cmath>

#include "blockdance/ada/decision_net.hpp"
#include "blockdance/ada/policy.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace blockdance;

namespace {

DecisionNetConfig tiny_net() {
  DecisionNetConfig c;
  c.tokens = 4;
  c.in_channels = 2;
  c.cond_dim = 3;
  c.pooled_tokens = 2;
  c.width = 4;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.head_hidden = 5;
  c.actions = 3;
  c.seed = 1;
  return c;
}

// Every weight drawn uniformly so the zero-initialized head is active.
DecisionNet randomized(const DecisionNetConfig& cfg, std::uint64_t seed,
                       Real scale = 0.5) {
  DecisionParams p = init_decision_params(cfg);
  oracle::SplitMix sm(seed);
  VectorR flat = flatten(p);
  for (Index i = 0; i < flat.size(); ++i) flat(i) = scale * sm.uniform();
  assign_flat(p, flat);
  return DecisionNet(cfg, p);
}

}  // namespace

TEST_CASE("fresh decision net outputs m = 0.5") {
  const DecisionNetConfig cfg = tiny_net();
  const DecisionNet net(cfg);
  oracle::SplitMix sm(1);
  const VectorR m = decide(net, sm.matrix(4, 2), sm.matrix(3, 1));
  REQUIRE(m.size() == 3);
  for (Index i = 0; i < 3; ++i) CHECK(m(i) == 0.5);
  CHECK(greedy_actions(m) == std::vector<int>{1, 1, 1});
}

TEST_CASE("config validation") {
  DecisionNetConfig cfg = tiny_net();
  cfg.pooled_tokens = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_net();
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("flatten and assign_flat are inverse") {
  const DecisionNet net = randomized(tiny_net(), 2);
  const VectorR flat = flatten(net.params());
  CHECK(flat.size() == static_cast<Index>(net.params().parameter_count()));
  DecisionParams p = net.params().zeros_like();
  assign_flat(p, flat);
  CHECK(flatten(p) == flat);
}

TEST_CASE("bernoulli logprob equals the termwise product") {
  VectorR logits(4);
  logits << -2.0, 0.3, 5.0, -30.0;
  const std::vector<int> u = {1, 0, 1, 0};
  double prod = 1;
  for (int t = 0; t < 4; ++t) {
    const double m = 1 / (1 + std::exp(-logits(t)));
    prod *= u[t] ? m : 1 - m;
  }
  const double lp = bernoulli_logprob(logits, u);
  CHECK(std::abs(std::exp(lp) - prod) <= 1e-9 * prod);
  VectorR m(4);
  for (int t = 0; t < 4; ++t) m(t) = 1 / (1 + std::exp(-logits(t)));
  CHECK(bernoulli_logprob_from_probs(m, u) == doctest::Approx(lp).epsilon(1e-9));
}

TEST_CASE("greedy thresholds at one half with ties to cache") {
  VectorR m(3);
  m << 0.7, 0.2, 0.5;
  CHECK(greedy_actions(m) == std::vector<int>{1, 0, 1});
  CHECK(greedy_actions(m) == greedy_actions(m));
}

TEST_CASE("sampled actions follow m") {
  VectorR m(3);
  m << 0.1, 0.5, 0.85;
  RngStream rng(7, 0);
  VectorR mean = VectorR::Zero(3);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto u = sample_actions(m, rng);
    for (int t = 0; t < 3; ++t) mean(t) += u[t];
  }
  mean /= n;
  for (int t = 0; t < 3; ++t) CHECK(std::abs(mean(t) - m(t)) < 0.01);

  VectorR sure = VectorR::Constant(5, 1 - 1e-12);
  RngStream r2(8, 0);
  CHECK(sample_actions(sure, r2) == std::vector<int>(5, 1));
}

TEST_CASE("reward arithmetic") {
  CHECK(compute_reward({1, 1, 1}, 0, {}).compute == 0.0);
  CHECK(compute_reward({0, 0, 0, 0}, 0, {}).compute == 1.0);
  const Reward r = compute_reward({1, 0}, 0.3, RewardConfig{2.0});
  CHECK(r.compute == 0.5);
  CHECK(r.total == doctest::Approx(1.1).epsilon(1e-15));
}

TEST_CASE("quality proxy") {
  oracle::SplitMix sm(3);
  const MatrixR ref = sm.matrix(4, 3);
  CHECK(quality_proxy(ref, ref) == 1.0);
  CHECK(quality_proxy(MatrixR::Zero(4, 3), ref) == 0.0);
  for (int i = 0; i < 5; ++i) {
    const MatrixR pol = ref + 0.2 * sm.matrix(4, 3);
    const Real scale = oracle::rmse(ref, MatrixR::Zero(4, 3));
    const Real expected = 1 - std::min(1.0, oracle::rmse(pol, ref) / scale);
    CHECK(std::abs(quality_proxy(pol, ref) - expected) <= 1e-10);
  }
  CHECK(quality_proxy(MatrixR::Constant(2, 2, 0.5), MatrixR::Zero(2, 2)) == 0.5);
  CHECK(exact_match_quality(ref, ref) == 1.0);
  MatrixR nudged = ref;
  nudged(2, 1) = std::nextafter(nudged(2, 1), 10.0);
  CHECK(exact_match_quality(nudged, ref) == 0.0);
}

TEST_CASE("zero rewards give a zero gradient; non-finite rewards throw") {
  const DecisionNet net = randomized(tiny_net(), 4);
  oracle::SplitMix sm(4);
  std::vector<Rollout> batch;
  for (int i = 0; i < 3; ++i) {
    batch.push_back({sm.matrix(4, 2), sm.matrix(3, 1), {1, 0, i % 2}, 0.0});
  }
  CHECK(flatten(reinforce_grad(net, batch)).isZero(0));
  batch[1].reward = std::nan("");
  CHECK_THROWS_AS(reinforce_grad(net, batch), TrainingError);
}

TEST_CASE("logprob gradient matches central differences on a few weights") {
  const DecisionNetConfig cfg = tiny_net();
  const DecisionNet net = randomized(cfg, 5);
  oracle::SplitMix sm(5);
  const MatrixR z = sm.matrix(4, 2);
  const VectorR c = sm.matrix(3, 1);
  const std::vector<int> u = {1, 0, 1};
  const VectorR g = flatten(logprob_grad(net, z, c, u));
  const VectorR w = flatten(net.params());
  for (Index i = 0; i < w.size(); i += 17) {
    const Real h = 1e-5;
    DecisionParams plus = net.params(), minus = net.params();
    VectorR wp = w, wm = w;
    wp(i) += h;
    wm(i) -= h;
    assign_flat(plus, wp);
    assign_flat(minus, wm);
    const Real fd = (bernoulli_logprob(DecisionNet(cfg, plus).logits(z, c), u) -
                     bernoulli_logprob(DecisionNet(cfg, minus).logits(z, c), u)) /
                    (2 * h);
    CHECK(std::abs(fd - g(i)) <= 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("adam ascends the objective") {
  const DecisionNetConfig cfg = tiny_net();
  DecisionParams p = init_decision_params(cfg);
  const VectorR before = flatten(p);
  DecisionParams g = p.zeros_like();
  g.head2_b(0) = 3.0;
  g.head2_b(1) = -0.5;
  AdamAscent adam(AdamConfig{0.01}, static_cast<Index>(p.parameter_count()));
  adam.step(p, g);
  CHECK(p.head2_b(0) == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(p.head2_b(1) == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(p.head2_b(2) == 0.0);
  CHECK(adam.steps() == 1);
  CHECK((flatten(p) - before).cwiseAbs().maxCoeff() <= 0.01 + 1e-12);
}
