#include "blockdance/ada/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace blockdance {

PolicyEnvironment::PolicyEnvironment(const DitModel& model, NoiseSchedule sched,
                                     SamplerPlan plan, int rho_steps,
                                     int cutoff)
    : model_(model),
      sched_(std::move(sched)),
      plan_(std::move(plan)),
      rho_steps_(rho_steps),
      cutoff_(cutoff) {
  plan_.validate(sched_);
  if (rho_steps_ < 1 || rho_steps_ >= plan_.steps()) {
    throw ConfigError("policy environment: need 1 <= rho_steps < steps");
  }
  if (cutoff_ < 1 || cutoff_ > model_.config().depth - 1) {
    throw ConfigError("policy environment: cutoff must be in [1, depth - 1]");
  }
}

PolicyInstance PolicyEnvironment::prepare(int id, const MatrixR& z_T,
                                          const VectorR& context) const {
  PolicyInstance inst;
  inst.id = id;
  inst.context = context;
  RngStream rng(0, static_cast<std::uint64_t>(id));

  BlockDanceExecutor prefix(
      model_, build_schedule_from_actions({}, rho_steps_), cutoff_);
  SampleOptions opt;
  opt.stop_step = rho_steps_;
  // Only the prefix runs, so the prefix-only schedule is long enough.
  SampleResult head = sample(model_, plan_, sched_, context, prefix, z_T, rng, opt);
  inst.z_rho = head.z0;
  inst.prefix_cache = prefix.store().entry();

  FullExecutor full(model_);
  SampleOptions rest;
  rest.start_step = rho_steps_;
  inst.z0_reference =
      sample(model_, plan_, sched_, context, full, inst.z_rho, rng, rest).z0;
  return inst;
}

PolicyInstance PolicyEnvironment::synthetic(int id, std::uint64_t seed) const {
  const auto& cfg = model_.config();
  RngStream latent(seed, 2 * static_cast<std::uint64_t>(id) + 1);
  RngStream ctx(seed, 2 * static_cast<std::uint64_t>(id) + 2);
  const MatrixR z_T = gaussian(latent, cfg.tokens, cfg.in_channels);
  const VectorR c = gaussian(ctx, cfg.cond_dim);
  return prepare(id, z_T, c);
}

SampleResult PolicyEnvironment::rollout(const PolicyInstance& inst,
                                        const std::vector<int>& u) const {
  if (static_cast<int>(u.size()) != actions()) {
    throw DimensionError("rollout: action vector length != s - rho");
  }
  BlockDanceExecutor exec(model_, build_schedule_from_actions(u, rho_steps_),
                          cutoff_);
  exec.store().update(inst.prefix_cache, rho_steps_ - 1);
  RngStream rng(0, static_cast<std::uint64_t>(inst.id));
  SampleOptions opt;
  opt.start_step = rho_steps_;
  return sample(model_, plan_, sched_, inst.context, exec, inst.z_rho, rng, opt);
}

Real expected_cache_steps(const DecisionNet& net,
                          const std::vector<PolicyInstance>& instances) {
  if (instances.empty()) return 0;
  Real total = 0;
  for (const auto& inst : instances) {
    total += decide(net, inst.z_rho, inst.context).sum();
  }
  return total / static_cast<Real>(instances.size());
}

PolicyTrainer::PolicyTrainer(const PolicyEnvironment& env,
                             std::vector<PolicyInstance> dataset,
                             RewardConfig reward, QualityFn quality,
                             TrainHyper hyper, DecisionNet net)
    : env_(env),
      dataset_(std::move(dataset)),
      reward_(reward),
      quality_(std::move(quality)),
      hyper_(hyper),
      net_(std::move(net)),
      adam_(hyper.adam, static_cast<Index>(net_.params().parameter_count())) {
  if (dataset_.empty()) throw TrainingError("train_policy: empty dataset");
  if (hyper_.batch_size < 1) throw ConfigError("train_policy: batch size < 1");
  if (reward_.lambda < 0) throw ConfigError("train_policy: lambda must be >= 0");
  if (net_.config().actions != env_.actions()) {
    throw ConfigError("train_policy: decision net emits " +
                      std::to_string(net_.config().actions) +
                      " actions, sampler needs " +
                      std::to_string(env_.actions()));
  }
}

Real PolicyTrainer::quality_of(const PolicyInstance& inst,
                               const std::vector<int>& u) {
  const auto key = std::make_pair(inst.id, u);
  const auto it = quality_memo_.find(key);
  if (it != quality_memo_.end()) return it->second;
  const Real q = quality_(env_.rollout(inst, u).z0, inst.z0_reference);
  quality_memo_.emplace(key, q);
  return q;
}

EpochStats PolicyTrainer::run_epoch() {
  std::vector<std::size_t> order(dataset_.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream shuffle(hyper_.seed, 0xE90C0000ULL + static_cast<std::uint64_t>(epoch_));
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(shuffle.next_uniform() * i);
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }

  EpochStats stats;
  stats.epoch = epoch_ + 1;
  std::size_t seen = 0;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(hyper_.batch_size)) {
    const std::size_t stop =
        std::min(order.size(), start + static_cast<std::size_t>(hyper_.batch_size));
    std::vector<Rollout> batch;
    Real batch_reward = 0;
    for (std::size_t k = start; k < stop; ++k) {
      const PolicyInstance& inst = dataset_[order[k]];
      RngStream rng(hyper_.seed, 0x5A3B1E00000000ULL + rollouts_++);
      const PolicyOutput pol = sample_policy(net_, inst.z_rho, inst.context, rng);
      Real q = 0;
      // With lambda == 0 the quality term cannot move the reward.
      if (reward_.lambda != 0) q = quality_of(inst, pol.u);
      const Reward r = compute_reward(pol.u, q, reward_);
      batch.push_back(Rollout{inst.z_rho, inst.context, pol.u, r.total});
      batch_reward += r.total;
      stats.mean_reward += r.total;
      stats.mean_compute += r.compute;
      stats.mean_quality += r.quality;
      stats.mean_cache_steps +=
          static_cast<Real>(std::accumulate(pol.u.begin(), pol.u.end(), 0));
      ++seen;
    }
    batch_reward /= static_cast<Real>(batch.size());

    Real baseline = 0;
    if (hyper_.use_baseline) {
      if (!baseline_ready_) {
        baseline_ = batch_reward;
        baseline_ready_ = true;
      }
      baseline = baseline_;
    }
    const DecisionParams grad = reinforce_grad(net_, batch, baseline);
    adam_.step(net_.mutable_params(), grad);
    if (hyper_.use_baseline) {
      baseline_ = hyper_.baseline_decay * baseline_ +
                  (1 - hyper_.baseline_decay) * batch_reward;
    }
    const VectorR flat = flatten(net_.params());
    if (!flat.allFinite()) {
      const VectorR g = flatten(grad);
      std::ostringstream msg;
      msg << "policy weights diverged at epoch " << epoch_ + 1
          << ", batch starting " << start << " (max |grad| = "
          << g.cwiseAbs().maxCoeff() << ", batch mean R = " << batch_reward
          << ")";
      throw TrainingError(msg.str());
    }
  }
  const Real n = static_cast<Real>(seen);
  stats.mean_reward /= n;
  stats.mean_compute /= n;
  stats.mean_quality /= n;
  stats.mean_cache_steps /= n;
  stats.mean_expected_cache_steps = expected_cache_steps(net_, dataset_);
  ++epoch_;
  return stats;
}

PolicyTrainer::ResumeState PolicyTrainer::resume_state() const {
  ResumeState s;
  s.epoch = epoch_;
  s.rollouts = rollouts_;
  s.baseline = baseline_;
  s.baseline_ready = baseline_ready_;
  s.adam_steps = adam_.steps();
  s.adam_m = adam_.first_moment();
  s.adam_v = adam_.second_moment();
  return s;
}

void PolicyTrainer::restore(const DecisionParams& params,
                            const ResumeState& state) {
  net_ = DecisionNet(net_.config(), params);
  epoch_ = state.epoch;
  rollouts_ = state.rollouts;
  baseline_ = state.baseline;
  baseline_ready_ = state.baseline_ready;
  adam_.restore(state.adam_steps, state.adam_m, state.adam_v);
}

namespace {

nlohmann::ordered_json net_config_json(const DecisionNetConfig& c) {
  return {{"tokens", c.tokens},         {"in_channels", c.in_channels},
          {"cond_dim", c.cond_dim},     {"pooled_tokens", c.pooled_tokens},
          {"width", c.width},           {"heads", c.heads},
          {"blocks", c.blocks},         {"mlp_ratio", c.mlp_ratio},
          {"head_hidden", c.head_hidden}, {"actions", c.actions},
          {"seed", c.seed}};
}

DecisionNetConfig net_config_from_json(const nlohmann::json& j) {
  DecisionNetConfig c;
  c.tokens = j.at("tokens");
  c.in_channels = j.at("in_channels");
  c.cond_dim = j.at("cond_dim");
  c.pooled_tokens = j.at("pooled_tokens");
  c.width = j.at("width");
  c.heads = j.at("heads");
  c.blocks = j.at("blocks");
  c.mlp_ratio = j.at("mlp_ratio");
  c.head_hidden = j.at("head_hidden");
  c.actions = j.at("actions");
  c.seed = j.at("seed");
  return c;
}

// Doubles as 17 significant digits survive a JSON round trip exactly.
std::string exact(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void save_policy_checkpoint(const std::filesystem::path& stem,
                            const PolicyTrainer& trainer) {
  const auto state = trainer.resume_state();
  const VectorR weights = flatten(trainer.net().params());
  TensorRecord rec;
  rec.shape = {static_cast<std::uint64_t>(weights.size() * 3)};
  rec.data.reserve(rec.shape[0]);
  rec.data.insert(rec.data.end(), weights.data(), weights.data() + weights.size());
  rec.data.insert(rec.data.end(), state.adam_m.data(),
                  state.adam_m.data() + state.adam_m.size());
  rec.data.insert(rec.data.end(), state.adam_v.data(),
                  state.adam_v.data() + state.adam_v.size());

  nlohmann::ordered_json j;
  j["schema"] = "blockdance-policy-checkpoint/1";
  j["net"] = net_config_json(trainer.net().config());
  const auto& h = trainer.hyper();
  j["hyper"] = {{"epochs", h.epochs},
                {"batch_size", h.batch_size},
                {"lr", exact(h.adam.lr)},
                {"beta1", exact(h.adam.beta1)},
                {"beta2", exact(h.adam.beta2)},
                {"adam_eps", exact(h.adam.eps)},
                {"use_baseline", h.use_baseline},
                {"baseline_decay", exact(h.baseline_decay)},
                {"seed", h.seed}};
  j["state"] = {{"epoch", state.epoch},
                {"rollouts", state.rollouts},
                {"baseline", exact(state.baseline)},
                {"baseline_ready", state.baseline_ready},
                {"adam_steps", state.adam_steps}};
  j["tensors"] = nlohmann::ordered_json::array();
  for_each_param(trainer.net().params(),
                 [&](const std::string& name, const auto& t) {
                   j["tensors"].push_back(
                       {{"name", name},
                        {"shape", {t.rows(), t.cols()}}});
                 });

  const auto tensor_path = std::filesystem::path(stem).concat(".tensor");
  const auto json_path = std::filesystem::path(stem).concat(".json");
  const auto tmp_tensor = std::filesystem::path(tensor_path).concat(".tmp");
  const auto tmp_json = std::filesystem::path(json_path).concat(".tmp");
  save_tensor(tmp_tensor, rec);
  {
    std::ofstream out(tmp_json, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp_json.string());
    out << j.dump(2) << "\n";
  }
  // Rename last so an interrupted save leaves the previous checkpoint intact.
  std::filesystem::rename(tmp_tensor, tensor_path);
  std::filesystem::rename(tmp_json, json_path);
}

LoadedPolicy load_policy_checkpoint(const std::filesystem::path& stem) {
  const auto json_path = std::filesystem::path(stem).concat(".json");
  std::ifstream in(json_path);
  if (!in) throw IoError("cannot open for reading: " + json_path.string());
  const auto j = nlohmann::json::parse(in);
  const DecisionNetConfig cfg = net_config_from_json(j.at("net"));
  DecisionParams params = init_decision_params(cfg);
  const TensorRecord rec =
      load_tensor(std::filesystem::path(stem).concat(".tensor"));
  const Index n = static_cast<Index>(params.parameter_count());
  if (rec.data.size() != static_cast<std::size_t>(3 * n)) {
    throw IoError("policy checkpoint: tensor length does not match config");
  }
  assign_flat(params, Eigen::Map<const VectorR>(rec.data.data(), n));
  LoadedPolicy out{DecisionNet(cfg, params), std::nullopt};
  if (j.contains("state")) {
    const auto& s = j.at("state");
    PolicyTrainer::ResumeState st;
    st.epoch = s.at("epoch");
    st.rollouts = s.at("rollouts");
    st.baseline = std::stod(s.at("baseline").get<std::string>());
    st.baseline_ready = s.at("baseline_ready");
    st.adam_steps = s.at("adam_steps");
    st.adam_m = Eigen::Map<const VectorR>(rec.data.data() + n, n);
    st.adam_v = Eigen::Map<const VectorR>(rec.data.data() + 2 * n, n);
    out.state = st;
  }
  return out;
}

}  // namespace blockdance
