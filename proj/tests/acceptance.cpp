// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "blockdance/ada/trainer.hpp"
#include "blockdance/cache/engine.hpp"
#include "blockdance/harness/commands.hpp"
#include "blockdance/profiler/profiler.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace blockdance;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Start {
  MatrixR z_T;
  VectorR context;
};

Start start_for(const DitConfig& cfg, std::uint64_t seed) {
  RngStream latent(seed, 1), ctx(seed, 2);
  return {gaussian(latent, cfg.tokens, cfg.in_channels),
          gaussian(ctx, cfg.cond_dim)};
}

// Wraps an executor and keeps every step's input, output and, before a
// reuse step, the feature the store is about to serve.
class Recorder : public StepExecutor {
 public:
  struct Step {
    MatrixR z_t;
    Conditioning cond;
    StepOutput out;
    std::optional<BlockFeature> served;
  };

  Recorder(StepExecutor& inner, const BlockDanceExecutor* bd,
           const StepSchedule* schedule)
      : inner_(inner), bd_(bd), schedule_(schedule) {}

  StepOutput run(int step, const MatrixR& z_t,
                 const Conditioning& cond) override {
    Step rec{z_t, cond, {}, std::nullopt};
    if (bd_ != nullptr &&
        schedule_->kinds[static_cast<std::size_t>(step)] == ScheduleStep::kReuse) {
      rec.served = bd_->store().entry();
    }
    rec.out = inner_.run(step, z_t, cond);
    steps.push_back(rec);
    return rec.out;
  }

  std::vector<Step> steps;

 private:
  StepExecutor& inner_;
  const BlockDanceExecutor* bd_;
  const StepSchedule* schedule_;
};

// ---------------------------------------------------------------------------

Outcome criterion1() {
  Outcome o;
  const auto t0 = Clock::now();
  const DitConfig cfg = DitConfig::toy();
  const DitModel model(cfg);
  const NoiseSchedule sched = make_linear_schedule(1000);
  const SamplerPlan plan = make_uniform_plan(30, 1000);
  const StepSchedule n1 = build_schedule({30, 0.4, 0.95, 1, default_cutoff(8)});
  int identical = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Start s = start_for(cfg, seed);
    FullExecutor full(model);
    Recorder rec_full(full, nullptr, nullptr);
    RngStream r1(seed, 3);
    const SampleResult a = sample(model, plan, sched, s.context, rec_full, s.z_T, r1);

    BlockDanceExecutor bd(model, n1, default_cutoff(8));
    Recorder rec_bd(bd, &bd, &n1);
    RngStream r2(seed, 3);
    const SampleResult b = sample(model, plan, sched, s.context, rec_bd, s.z_T, r2);

    bool same = a.z0 == b.z0 && a.trace.total_macs() == b.trace.total_macs();
    for (int j = 0; j < 30 && same; ++j) {
      same = rec_full.steps[j].z_t == rec_bd.steps[j].z_t &&
             rec_full.steps[j].out.eps == rec_bd.steps[j].out.eps;
    }
    identical += same;
  }
  const double secs = seconds_since(t0);
  o.require(identical == 20, "bit-identical on every seed");
  o.require(secs < 10.0, "runtime under 10 s");
  o.detail << identical << "/20 seeds bit-identical (z_t, eps, z0), "
           << secs << " s";
  return o;
}

Outcome criterion2() {
  Outcome o;
  const DitConfig cfg = DitConfig::toy();
  const DitModel model(cfg);
  const int cutoff = default_cutoff(cfg.depth);
  const NoiseSchedule sched = make_linear_schedule(1000);
  const SamplerPlan plan = make_uniform_plan(30, 1000);
  const StepSchedule s2 = build_schedule({30, 0.4, 0.95, 2, cutoff});
  double worst = 0;
  int reuse_steps = 0, counter_ok = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const Start s = start_for(cfg, seed);
    BlockDanceExecutor bd(model, s2, cutoff);
    Recorder rec(bd, &bd, &s2);
    RngStream rng(seed, 3);
    sample(model, plan, sched, s.context, rec, s.z_T, rng);
    for (std::size_t j = 0; j < rec.steps.size(); ++j) {
      const auto& st = rec.steps[j];
      if (!st.served) continue;
      ++reuse_steps;
      // Partial pipeline assembled from single blocks under the current
      // step's conditioning.
      const VectorR cv = model.condition_vector(st.cond);
      MatrixR x = st.served->values;
      for (int b = st.served->block_index + 1; b <= cfg.depth; ++b) {
        x = model.run_single_block(b, x, cv);
      }
      const MatrixR eps = model.output_head(x, cv);
      worst = std::max(worst, (eps - st.out.eps).cwiseAbs().maxCoeff());
      counter_ok += st.out.blocks_executed == cfg.depth - cutoff &&
                    st.served->block_index == cutoff &&
                    bd.reuse_sources()[j] == static_cast<int>(j) - 1;
    }
  }
  o.require(reuse_steps == 24, "8 reuse steps per run");
  o.require(worst <= 1e-12, "|eps - oracle| <= 1e-12");
  o.require(counter_ok == reuse_steps, "block counter == L - cutoff");
  o.detail << reuse_steps << " reuse steps over 3 seeds, max |d eps| = " << worst
           << ", block counter == " << cfg.depth - cutoff << " on "
           << counter_ok << "/" << reuse_steps;
  return o;
}

Outcome criterion3() {
  Outcome o;
  DitConfig cfg = DitConfig::toy();
  cfg.depth = 4;
  const DitModel model(cfg);
  const int cutoff = default_cutoff(cfg.depth);
  const NoiseSchedule sched = make_linear_schedule(1000);
  const SamplerPlan plan = make_uniform_plan(30, 1000);
  // Closed form written out independently of the library.
  const std::uint64_t T = 16, d = 64, din = 4, cd = 64, h = 256;
  const std::uint64_t block =
      cd * 6 * d + T * d * 3 * d + 2 * T * T * d + T * d * d + 2 * T * d * h;
  const std::uint64_t fixed = 2 * cd * cd + cd * 2 * d + T * d * din;
  int exact = 0, runs = 0;
  std::vector<StepSchedule> schedules;
  for (int n = 1; n <= 4; ++n) schedules.push_back(build_schedule({30, 0.4, 0.95, n, cutoff}));
  schedules.push_back(deepcache_style_schedule(30, 3));
  for (const auto& sch : schedules) {
    const Start s = start_for(cfg, 7);
    BlockDanceExecutor bd(model, sch, cutoff);
    RngStream rng(7, 3);
    const SampleResult r = sample(model, plan, sched, s.context, bd, s.z_T, rng);
    const std::uint64_t hand =
        static_cast<std::uint64_t>(sch.cache_count()) * (T * din * d + fixed + 4 * block) +
        static_cast<std::uint64_t>(sch.reuse_count()) * (fixed + (4 - cutoff) * block);
    const MacSummary rep = mac_report(r.trace, cfg);
    ++runs;
    exact += rep.total == r.trace.total_macs() && rep.total == hand &&
             predicted_macs(sch, cfg, cutoff).total == hand;
  }
  o.require(exact == runs, "closed form == instrumented counter");

  const DitConfig large = DitConfig::paper_shaped();
  std::vector<std::uint64_t> totals;
  for (int n = 1; n <= 4; ++n) {
    totals.push_back(
        predicted_macs(build_schedule({30, 0.4, 0.95, n, 20}), large, 20).total);
  }
  const MacSummary p2 =
      predicted_macs(build_schedule({30, 0.4, 0.95, 2, 20}), large, 20);
  const double target = (128.47 - 98.21) / 128.47;
  o.require(std::abs(p2.saved_fraction - target) <= 0.05,
            "large-profile saving within 5 pp of 23.6%");
  bool monotone = true;
  for (int i = 1; i < 4; ++i) monotone = monotone && totals[i] <= totals[i - 1];
  o.require(monotone, "total MACs non-increasing in N");
  const MacSummary early =
      predicted_macs(build_schedule({30, 0.25, 0.95, 2, 20}), large, 20);
  o.detail << exact << "/" << runs << " toy L=4 runs exact; large profile N=2 saves "
           << 100 * p2.saved_fraction << "% (reference " << 100 * target
           << "%, " << p2.total / 1e9 << " vs " << p2.baseline / 1e9
           << " GMAC); totals N=1..4 monotone=" << monotone
           << "; window [25%, 95%] N=2 saves " << 100 * early.saved_fraction << "%";
  return o;
}

Outcome criterion4() {
  Outcome o;
  RunConfig cfg;
  cfg.seed = 1;
  const auto fixed = bench_rows(cfg);
  std::vector<double> s;
  for (const auto& r : fixed) s.push_back(*r.ssim);
  o.require(s.size() == 4 && s[0] == 1.0, "SSIM(N=1) == 1 exactly");
  bool mono = true;
  for (std::size_t i = 1; i < s.size(); ++i) mono = mono && s[i] <= s[i - 1];
  o.require(mono, "non-increasing over N at seed 1");

  RunConfig sweep;
  for (std::uint64_t k = 0; k < 20; ++k) sweep.bench.seeds.push_back(k);
  const auto rows = bench_rows(sweep);
  std::map<int, double> mean;
  std::map<std::uint64_t, std::vector<double>> per_seed;
  for (const auto& r : rows) {
    mean[r.group_size] += *r.ssim / 20.0;
    per_seed[r.seed].push_back(*r.ssim);
  }
  bool mean_mono = true;
  for (int n = 2; n <= 4; ++n) mean_mono = mean_mono && mean[n] <= mean[n - 1];
  int seeds_mono = 0;
  for (const auto& [seed, v] : per_seed) {
    seeds_mono += v[1] <= v[0] && v[2] <= v[1] && v[3] <= v[2];
  }
  o.require(mean_mono, "20-seed mean non-increasing");
  o.detail.precision(12);
  o.detail << "seed 1 SSIM N=1..4: " << s[0] << ", " << s[1] << ", " << s[2]
           << ", " << s[3] << "; 20-seed mean 1-SSIM: " << 1 - mean[2] << ", "
           << 1 - mean[3] << ", " << 1 - mean[4] << "; per-seed monotone on "
           << seeds_mono << "/20";
  return o;
}

class LinearPredictor : public StepExecutor {
 public:
  explicit LinearPredictor(Real k) : k_(k) {}
  StepOutput run(int, const MatrixR& z, const Conditioning&) override {
    StepOutput out;
    out.eps = k_ * z;
    return out;
  }

 private:
  Real k_;
};

Outcome criterion5() {
  Outcome o;
  const NoiseSchedule sched = make_linear_schedule(1000);
  const auto ab = oracle::linear_alpha_bar(1000, 1e-4L, 2e-2L);
  oracle::SplitMix sm(55);
  const MatrixR z0 = sm.matrix(16, 4, -2, 2), eps = sm.matrix(16, 4, -2, 2);
  double worst_inv = 0;
  for (int t = 0; t < 1000; ++t) {
    const MatrixR zt = forward_diffuse(z0, eps, t, sched);
    worst_inv = std::max(worst_inv, (predict_x0(zt, eps, t, sched) - z0).cwiseAbs().maxCoeff());
  }
  o.require(worst_inv <= 1e-10, "inversion identity within 1e-10");

  DitConfig tiny;
  tiny.depth = 2;
  tiny.width = 4;
  tiny.tokens = 4;
  tiny.heads = 1;
  tiny.cond_dim = 4;
  tiny.in_channels = 2;
  const DitModel model(tiny);
  const SamplerPlan plan = make_uniform_plan(50, 1000);
  const Real k = 0.7;
  const MatrixR zT = sm.matrix(4, 2, -2, 2);
  LinearPredictor pred(k);
  RngStream rng(0, 0);
  const SampleResult r =
      sample(model, plan, sched, VectorR::Zero(4), pred, zT, rng);
  double worst_traj = 0, scale = 0;
  for (Index i = 0; i < zT.size(); ++i) {
    long double z = zT.data()[i];
    for (int j = 0; j < 50; ++j) {
      const int t = plan.timesteps[j];
      const long double a = ab[t];
      const long double ap = j + 1 < 50 ? ab[plan.timesteps[j + 1]] : 1.0L;
      const long double e = k * z;
      const long double x0 = (z - std::sqrt(1 - a) * e) / std::sqrt(a);
      z = std::sqrt(ap) * x0 + std::sqrt(1 - ap) * e;
    }
    worst_traj = std::max(worst_traj,
                          static_cast<double>(std::fabs(z - r.z0.data()[i])));
    scale = std::max(scale, static_cast<double>(std::fabs(z)));
  }
  o.require(worst_traj <= 1e-10, "eta=0 trajectory within 1e-10 of recursion");
  o.require(rng.counter() == 0, "eta=0 consumed no random draws");
  o.detail << "max inversion error " << worst_inv << " over t=0..999; 50-step "
           << "linear-predictor trajectory max |d| " << worst_traj
           << " (|z0| up to " << scale << ")";
  return o;
}

DecisionNetConfig tiny_net(int actions) {
  DecisionNetConfig c;
  c.tokens = 4;
  c.in_channels = 2;
  c.cond_dim = 3;
  c.pooled_tokens = 2;
  c.width = 4;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.head_hidden = 5;
  c.actions = actions;
  c.seed = 3;
  return c;
}

DecisionNet randomized(const DecisionNetConfig& cfg, std::uint64_t seed) {
  DecisionParams p = init_decision_params(cfg);
  oracle::SplitMix sm(seed);
  VectorR flat = flatten(p);
  for (Index i = 0; i < flat.size(); ++i) flat(i) = 0.5 * sm.uniform();
  assign_flat(p, flat);
  return DecisionNet(cfg, p);
}

std::vector<std::vector<int>> all_actions(int n) {
  std::vector<std::vector<int>> out;
  for (int mask = 0; mask < (1 << n); ++mask) {
    std::vector<int> u(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) u[static_cast<std::size_t>(t)] = (mask >> t) & 1;
    out.push_back(u);
  }
  return out;
}

// Termwise probability of u under sigmoid(logits).
long double action_prob(const VectorR& logits, const std::vector<int>& u) {
  long double p = 1;
  for (std::size_t t = 0; t < u.size(); ++t) {
    const long double m = 1.0L / (1.0L + std::exp(-static_cast<long double>(logits(t))));
    p *= u[t] ? m : 1 - m;
  }
  return p;
}

Outcome criterion6() {
  Outcome o;
  const int n = 3;
  const DecisionNetConfig cfg = tiny_net(n);
  const DecisionNet net = randomized(cfg, 8);
  oracle::SplitMix sm(9);
  const MatrixR z = sm.matrix(4, 2);
  const VectorR c = sm.matrix(3, 1);
  const auto space = all_actions(n);

  // (a) logprob vs termwise product.
  double worst_lp = 0;
  for (int trial = 0; trial < 20; ++trial) {
    VectorR logits = 4 * sm.matrix(n, 1);
    for (const auto& u : space) {
      const long double p = action_prob(logits, u);
      worst_lp = std::max(worst_lp, static_cast<double>(
          std::fabs(std::exp(static_cast<long double>(bernoulli_logprob(logits, u))) - p) / p));
    }
  }
  o.require(worst_lp <= 1e-9, "logprob termwise within 1e-9");

  // (b) Monte Carlo estimator vs exact gradient of E[R].
  std::map<std::vector<int>, Real> reward;
  for (const auto& u : space) reward[u] = sm.uniform(-1, 2);
  std::map<std::vector<int>, VectorR> per_u;
  for (const auto& u : space) {
    per_u[u] = flatten(reinforce_grad(net, {Rollout{z, c, u, reward[u]}}));
  }
  const VectorR logits = net.logits(z, c);
  VectorR m(n);
  for (int t = 0; t < n; ++t) m(t) = 1 / (1 + std::exp(-logits(t)));
  // Exact dE/dlogits in closed form; equals the head bias gradient.
  VectorR exact_bias = VectorR::Zero(n);
  for (const auto& u : space) {
    const double p = static_cast<double>(action_prob(logits, u));
    for (int t = 0; t < n; ++t) exact_bias(t) += p * reward[u] * (u[t] - m(t));
  }
  const Index total = static_cast<Index>(net.params().parameter_count());
  VectorR dir(total);
  for (Index i = 0; i < total; ++i) dir(i) = sm.uniform();
  auto expected_reward = [&](const VectorR& w) {
    DecisionParams p = net.params();
    assign_flat(p, w);
    const VectorR lg = DecisionNet(cfg, p).logits(z, c);
    long double e = 0;
    for (const auto& u : space) e += action_prob(lg, u) * reward[u];
    return e;
  };
  const VectorR w0 = flatten(net.params());
  const Real hstep = 1e-5;
  const double exact_dir = static_cast<double>(
      (expected_reward(w0 + hstep * dir) - expected_reward(w0 - hstep * dir)) /
      (2 * hstep));
  // Head bias entries are the last n parameters.
  const Index bias0 = total - n;
  const int samples = 100000;
  RngStream rng(123, 0);
  VectorR sum = VectorR::Zero(n + 1), sum2 = VectorR::Zero(n + 1);
  for (int i = 0; i < samples; ++i) {
    const auto u = sample_actions(m, rng);
    const VectorR& g = per_u[u];
    VectorR v(n + 1);
    v.head(n) = g.segment(bias0, n);
    v(n) = g.dot(dir);
    sum += v;
    sum2 += v.cwiseProduct(v);
  }
  const VectorR mean = sum / samples;
  VectorR exact(n + 1);
  exact.head(n) = exact_bias;
  exact(n) = exact_dir;
  int within = 0;
  double worst_z = 0;
  for (Index k = 0; k <= n; ++k) {
    const double var = sum2(k) / samples - mean(k) * mean(k);
    const double se = std::sqrt(var / samples);
    const double zscore = std::abs(mean(k) - exact(k)) / se;
    worst_z = std::max(worst_z, zscore);
    within += zscore <= 3.0;
  }
  o.require(within == n + 1, "estimator mean within 3 SE of exact gradient");

  // (c) Finite differences over every weight.
  const DecisionNetConfig fcfg = tiny_net(4);
  const DecisionNet fnet = randomized(fcfg, 10);
  const std::vector<int> fu = {1, 0, 0, 1};
  const VectorR g = flatten(logprob_grad(fnet, z, c, fu));
  const VectorR fw = flatten(fnet.params());
  double worst_rel = 0, worst_abs_small = 0;
  int checked = 0;
  for (Index i = 0; i < fw.size(); ++i) {
    const Real h = 1e-5;
    DecisionParams plus = fnet.params(), minus = fnet.params();
    VectorR wp = fw, wm = fw;
    wp(i) += h;
    wm(i) -= h;
    assign_flat(plus, wp);
    assign_flat(minus, wm);
    const Real fd = (bernoulli_logprob(DecisionNet(fcfg, plus).logits(z, c), fu) -
                     bernoulli_logprob(DecisionNet(fcfg, minus).logits(z, c), fu)) /
                    (2 * h);
    const double scale = std::max(std::abs(fd), std::abs(g(i)));
    // Below 1e-6 the difference quotient itself has no 5 correct digits.
    if (scale >= 1e-6) {
      worst_rel = std::max(worst_rel, std::abs(fd - g(i)) / scale);
    } else {
      worst_abs_small = std::max(worst_abs_small, std::abs(fd - g(i)));
    }
    ++checked;
  }
  o.require(worst_rel <= 1e-5, "finite differences within relative 1e-5");
  o.require(worst_abs_small <= 1e-10, "tiny gradients within 1e-10 absolute");

  // (d) Constant baseline leaves the exact expected gradient unchanged.
  double worst_base = 0;
  for (Real b : {0.5, -2.0, 7.25}) {
    VectorR plain = VectorR::Zero(total), shifted = VectorR::Zero(total);
    for (const auto& u : space) {
      const double p = static_cast<double>(action_prob(logits, u));
      plain += p * per_u[u];
      shifted += p * flatten(reinforce_grad(net, {Rollout{z, c, u, reward[u]}}, b));
    }
    worst_base = std::max(worst_base, (plain - shifted).cwiseAbs().maxCoeff());
  }
  o.require(worst_base <= 1e-10, "baseline neutrality within 1e-10");

  o.detail << "logprob rel err " << worst_lp << "; estimator worst |z| "
           << worst_z << " over " << n + 1 << " components (" << samples
           << " samples); FD on " << checked << " weights max rel err "
           << worst_rel << " (abs err " << worst_abs_small
           << " where |grad| < 1e-6); baseline shift max |d| " << worst_base;
  return o;
}

struct SmallPolicySetup {
  DitConfig dit;
  DitModel model;
  PolicyEnvironment env;

  SmallPolicySetup()
      : dit(make_dit()),
        model(dit),
        env(model, make_linear_schedule(1000), make_uniform_plan(10, 1000), 4,
            default_cutoff(4)) {}

  static DitConfig make_dit() {
    DitConfig c;
    c.depth = 4;
    c.width = 32;
    c.tokens = 16;
    c.heads = 4;
    c.cond_dim = 32;
    c.in_channels = 4;
    c.mlp_ratio = 4;
    c.seed = 77;
    return c;
  }

  DecisionNet fresh_net() const {
    DecisionNetConfig c;
    c.tokens = dit.tokens;
    c.in_channels = dit.in_channels;
    c.cond_dim = dit.cond_dim;
    c.actions = env.actions();
    c.seed = 78;
    return DecisionNet(c);
  }
};

Outcome criterion7() {
  Outcome o;
  const auto t0 = Clock::now();
  const SmallPolicySetup setup;
  std::vector<PolicyInstance> data, held_out;
  for (int i = 0; i < 16; ++i) data.push_back(setup.env.synthetic(i, 2024));
  for (int i = 0; i < 20; ++i) held_out.push_back(setup.env.synthetic(100 + i, 2024));

  TrainHyper hyper;
  hyper.batch_size = 16;
  hyper.adam.lr = 1e-2;
  hyper.seed = 31;

  // lambda = 0: only the compute reward remains.
  const DecisionNet net0 = setup.fresh_net();
  const Real init_sum = expected_cache_steps(net0, data);
  PolicyTrainer zero(setup.env, data, RewardConfig{0.0}, quality_proxy, hyper, net0);
  EpochStats first0, last0;
  for (int it = 0; it < 200; ++it) {
    last0 = zero.run_epoch();
    if (it == 0) first0 = last0;
  }
  const Real final_sum = expected_cache_steps(zero.net(), data);
  o.require(final_sum <= 0.5 * init_sum, "lambda=0 halves mean sum(u)");

  // Exact-match quality with lambda = 10.
  PolicyTrainer exact(setup.env, data, RewardConfig{10.0}, exact_match_quality,
                      hyper, setup.fresh_net());
  for (int it = 0; it < 200; ++it) exact.run_epoch();
  int all_cache = 0;
  double min_m = 1;
  for (const auto& inst : held_out) {
    const VectorR m = decide(exact.net(), inst.z_rho, inst.context);
    min_m = std::min(min_m, m.minCoeff());
    const auto u = greedy_actions(m);
    all_cache += std::accumulate(u.begin(), u.end(), 0) == setup.env.actions();
  }
  const double secs = seconds_since(t0);
  o.require(all_cache >= 18, "greedy all-cache on >= 90% of held-out");
  o.require(secs < 120, "runtime under 2 min");
  o.detail << "lambda=0: mean sum(m) " << init_sum << " -> " << final_sum
           << " (sampled sum(u) " << first0.mean_cache_steps << " -> "
           << last0.mean_cache_steps << ") after 200 iterations; exact-match "
           << "lambda=10: greedy all-cache on " << all_cache
           << "/20 held-out, min m " << min_m << "; " << secs << " s";
  return o;
}

Outcome criterion8() {
  Outcome o;
  oracle::SplitMix sm(88);
  FeatureLog log;
  log.tokens = 16;
  log.width = 24;
  const int steps = 12, depth = 5;
  for (int t = 0; t < steps; ++t) {
    for (int b = 1; b <= depth; ++b) {
      log.records.push_back({t, 1000 - t, b, sm.matrix(16, 24, -3, 3)});
    }
  }
  const MatrixR surf = l2_surface(log, depth);
  double worst_l2 = 0;
  for (int t = 0; t + 1 < steps; ++t) {
    for (int b = 1; b <= depth; ++b) {
      worst_l2 = std::max(worst_l2, std::abs(surf(t, b - 1) - oracle::frobenius_distance(
                                                      log.find(t, b)->values,
                                                      log.find(t + 1, b)->values)));
    }
  }
  o.require(surf.rows() == steps - 1 && surf.cols() == depth, "surface shape");
  o.require(worst_l2 <= 1e-10, "L2 surface within 1e-10");

  double worst_cos = 0;
  bool symmetric = true, unit = true;
  for (int b = 1; b <= depth; ++b) {
    const MatrixR cm = cosine_matrix(log, b);
    for (int i = 0; i < steps; ++i) {
      unit = unit && cm(i, i) == 1.0;
      for (int j = 0; j < steps; ++j) {
        symmetric = symmetric && cm(i, j) == cm(j, i);
        if (i != j) {
          worst_cos = std::max(worst_cos, std::abs(cm(i, j) - oracle::cosine(
                                                      log.find(i, b)->values,
                                                      log.find(j, b)->values)));
        }
      }
    }
  }
  o.require(worst_cos <= 1e-9, "cosine within 1e-9");
  o.require(symmetric && unit, "cosine symmetric with unit diagonal");

  double worst_ssim = 0, self = 1;
  for (int trial = 0; trial < 10; ++trial) {
    const MatrixR a = sm.matrix(20, 17, -1, 3);
    const MatrixR b = a + 0.5 * sm.matrix(20, 17);
    worst_ssim = std::max(worst_ssim, std::abs(ssim(a, b) - oracle::ssim(a, b, 8)));
    self = std::min(self, ssim(a, a));
  }
  o.require(worst_ssim <= 1e-8, "SSIM within 1e-8");
  o.require(std::abs(self - 1.0) <= 1e-15, "SSIM(x, x) == 1");
  o.detail << "max |d| L2 " << worst_l2 << ", cosine " << worst_cos
           << ", SSIM " << worst_ssim << "; min SSIM(x,x) " << self;
  return o;
}

// --------------------------- CLI determinism -------------------------------

std::map<std::string, std::uint64_t> hash_tree(const fs::path& root) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    out[fs::relative(e.path(), root).string()] = fnv1a64(bytes.data(), bytes.size());
  }
  return out;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + BLOCKDANCE_CLI + "\" " + args +
                          " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome criterion9() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "blockdance_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path config = root / "config.json";
  {
    std::ofstream out(config);
    out << R"({
  "schema_version": 1,
  "seed": 5,
  "cache": {"mode": "blockdance", "group_size": 3},
  "bench": {"seeds": [5, 6]},
  "policy": {"epochs": 2, "dataset": 4, "batch_size": 2, "held_out": 2, "lr": 0.001},
  "reports": {"feature_log": true}
})";
  }
  const fs::path full_config = root / "full.json";
  {
    std::ofstream out(full_config);
    out << R"({"schema_version": 1, "seed": 5, "cache": {"mode": "full"}})";
  }
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"generate", "generate --config \"" + config.string() + "\""},
      {"generate-full", "generate --config \"" + full_config.string() + "\""},
      {"bench", "bench --threads 2 --config \"" + config.string() + "\""},
      {"profile", "profile --config \"" + config.string() + "\""},
      {"train-policy", "train-policy --config \"" + config.string() + "\""},
  };
  int same = 0;
  std::vector<std::string> differing;
  std::size_t files = 0;
  for (const auto& [name, args] : commands) {
    const fs::path a = root / ("a_" + name), b = root / ("b_" + name);
    const int ra = run_cli(args + " --out \"" + a.string() + "\"", root / (name + "_a.log"));
    const int rb = run_cli(args + " --out \"" + b.string() + "\"", root / (name + "_b.log"));
    const auto ha = hash_tree(a), hb = hash_tree(b);
    files += ha.size();
    if (ra == 0 && rb == 0 && !ha.empty() && ha == hb) {
      ++same;
    } else {
      differing.push_back(name + "(rc " + std::to_string(ra) + "/" +
                          std::to_string(rb) + ")");
    }
  }

  // Re-analysis of a saved feature log and trace inspection.
  fs::path profile_dir;
  for (const auto& e : fs::directory_iterator(root / "a_profile")) profile_dir = e.path();
  const std::string reanalyse =
      "profile --config \"" + config.string() + "\" --from-log \"" +
      profile_dir.string() + "\"";
  const int r1 = run_cli(reanalyse + " --out \"" + (root / "c_profile").string() + "\"",
                         root / "re_a.log");
  const int r2 = run_cli(reanalyse + " --out \"" + (root / "d_profile").string() + "\"",
                         root / "re_b.log");
  auto hc = hash_tree(root / "c_profile"), hd = hash_tree(root / "d_profile");
  auto hp = hash_tree(root / "a_profile");
  bool pure = r1 == 0 && r2 == 0 && hc == hd;
  for (const char* f : {"l2_surface.csv", "cosine_block6.csv", "ssim_by_step.csv",
                        "pca_projection.csv", "pca_summary.csv"}) {
    const std::string key = (profile_dir.filename() / f).string();
    pure = pure && hc.count(key) && hc[key] == hp[key];
  }
  pure ? ++same : (differing.push_back("profile --from-log"), 0);

  fs::path trace;
  for (const auto& e : fs::directory_iterator(root / "a_generate")) {
    if (e.path().string().find(".trace.json") != std::string::npos) trace = e.path();
  }
  const int i1 = run_cli("inspect-trace \"" + trace.string() + "\"", root / "inspect_a.log");
  const int i2 = run_cli("inspect-trace \"" + trace.string() + "\"", root / "inspect_b.log");
  const bool inspect_same = i1 == 0 && i2 == 0 &&
                            hash_tree(root).at("inspect_a.log") ==
                                hash_tree(root).at("inspect_b.log");
  inspect_same ? ++same : (differing.push_back("inspect-trace"), 0);

  // Exit-code contract on a bad config.
  const fs::path bad = root / "bad.json";
  {
    std::ofstream out(bad);
    out << R"({"schema_version": 1, "cache": {"grup_size": 2}})";
  }
  const int rc_bad = run_cli("generate --config \"" + bad.string() + "\"", root / "bad.log");
  o.require(rc_bad == 2, "invalid config exits 2");

  const int expected = static_cast<int>(commands.size()) + 2;
  o.require(same == expected, "identical artifacts on rerun");
  o.detail << same << "/" << expected << " command reruns byte-identical ("
           << files << " artifact files hashed)";
  for (const auto& d : differing) o.detail << " differs: " << d;
  o.detail << "; bad config exit code " << rc_bad;
  fs::remove_all(root);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"exactness baseline (N=1 vs unmodified sampler)", criterion1},
      {"skip soundness oracle (BlockDance-2 reuse steps)", criterion2},
      {"MAC accounting", criterion3},
      {"consistency trend (SSIM over N)", criterion4},
      {"DDIM correctness", criterion5},
      {"policy math", criterion6},
      {"degenerate-reward training", criterion7},
      {"profiler correctness", criterion8},
      {"end-to-end CLI determinism", criterion9},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " "
              << criteria[i].first << ": " << o.detail.str() << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
