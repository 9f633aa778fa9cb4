#include "blockdance/harness/run_config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace blockdance {

namespace {

using nlohmann::json;

// Strict view over one JSON object: every key must be consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(key, "a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(key, "an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() &&
            v.get<std::int64_t>() < 0) {
          fail(key, "a non-negative integer");
        }
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(key, "a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(key, "a string");
    } else {
      if (!v.is_array()) fail(key, "an array");
      for (const auto& e : v) {
        if (!e.is_number_integer()) fail(key, "an array of integers");
      }
    }
    out = v.get<T>();
  }

  const json* child(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (used_.count(it.key()) == 0) {
        throw ConfigError("unknown config key: " + path_ + it.key());
      }
    }
  }

 private:
  [[noreturn]] void fail(const std::string& key, const char* what) const {
    throw ConfigError("config key " + path_ + key + " must be " + what);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

DitConfig profile_preset(const std::string& name) {
  if (name == "toy") return DitConfig::toy();
  if (name == "paper") return DitConfig::paper_shaped();
  throw ConfigError("model.profile must be \"toy\" or \"paper\"");
}

}  // namespace

std::string format_real(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void RunConfig::validate() const {
  if (schema_version != kConfigSchemaVersion) {
    throw ConfigError("unsupported schema_version " +
                      std::to_string(schema_version));
  }
  model.validate();
  if (sampler.noise != "linear" && sampler.noise != "cosine") {
    throw ConfigError("sampler.noise must be \"linear\" or \"cosine\"");
  }
  if (sampler.steps < 1 || sampler.steps > sampler.steps_train) {
    throw ConfigError("sampler.steps must be in [1, steps_train]");
  }
  if (!(sampler.eta >= 0 && sampler.eta <= 1)) {
    throw ConfigError("sampler.eta must be in [0, 1]");
  }
  static const std::set<std::string> modes = {"full", "blockdance", "deepcache",
                                              "actions"};
  if (modes.count(cache.mode) == 0) {
    throw ConfigError("cache.mode must be full, blockdance, deepcache or actions");
  }
  if (cache.mode == "actions" && cache.actions_file.empty()) {
    throw ConfigError("cache.mode \"actions\" needs cache.actions_file");
  }
  schedule_policy(cache.group_size).validate(model.depth);
  if (bench.group_sizes.empty()) {
    throw ConfigError("bench.group_sizes must not be empty");
  }
  for (int n : bench.group_sizes) {
    if (n < 1) throw ConfigError("bench.group_sizes entries must be >= 1");
  }
  if (profile.pca_k < 1) throw ConfigError("profile.pca_k must be >= 1");
  if (policy.quality != "proxy" && policy.quality != "exact") {
    throw ConfigError("policy.quality must be \"proxy\" or \"exact\"");
  }
  if (policy.lambda < 0) throw ConfigError("policy.lambda must be >= 0");
  if (!(policy.rho > 0 && policy.rho < 1)) {
    throw ConfigError("policy.rho must be in (0, 1)");
  }
  if (policy.batch_size < 1 || policy.epochs < 0 || policy.dataset < 1 ||
      policy.held_out < 0) {
    throw ConfigError("policy sizes out of range");
  }
  if (!(policy.lr > 0)) throw ConfigError("policy.lr must be positive");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

int RunConfig::cutoff() const {
  return cache.cutoff == 0 ? default_cutoff(model.depth) : cache.cutoff;
}

SchedulePolicy RunConfig::schedule_policy(int group_size) const {
  return SchedulePolicy{sampler.steps, cache.rho, cache.window_end, group_size,
                        cutoff()};
}

NoiseSchedule RunConfig::noise_schedule() const {
  if (sampler.noise == "cosine") return make_cosine_schedule(sampler.steps_train);
  return make_linear_schedule(sampler.steps_train, sampler.beta_start,
                              sampler.beta_end);
}

SamplerPlan RunConfig::sampler_plan() const {
  return make_uniform_plan(sampler.steps, sampler.steps_train, sampler.eta);
}

DecisionNetConfig RunConfig::decision_net_config(int actions) const {
  DecisionNetConfig c;
  c.tokens = model.tokens;
  c.in_channels = model.in_channels;
  c.cond_dim = model.cond_dim;
  c.pooled_tokens = policy.pooled_tokens;
  c.width = policy.width;
  c.heads = policy.heads;
  c.head_hidden = policy.head_hidden;
  c.actions = actions;
  c.seed = seed ^ 0xADA5EEDULL;
  return c;
}

namespace {

json to_json_object(const RunConfig& c, bool with_io) {
  json j;
  j["schema_version"] = c.schema_version;
  j["seed"] = c.seed;
  j["model"] = {{"profile", c.model_profile},
                {"depth", c.model.depth},
                {"width", c.model.width},
                {"tokens", c.model.tokens},
                {"heads", c.model.heads},
                {"cond_dim", c.model.cond_dim},
                {"in_channels", c.model.in_channels},
                {"mlp_ratio", c.model.mlp_ratio},
                {"seed", c.model.seed}};
  j["sampler"] = {{"steps", c.sampler.steps},
                  {"steps_train", c.sampler.steps_train},
                  {"noise", c.sampler.noise},
                  {"beta_start", c.sampler.beta_start},
                  {"beta_end", c.sampler.beta_end},
                  {"eta", c.sampler.eta}};
  j["cache"] = {{"mode", c.cache.mode},
                {"rho", c.cache.rho},
                {"window_end", c.cache.window_end},
                {"group_size", c.cache.group_size},
                {"cutoff", c.cache.cutoff},
                {"actions_file", c.cache.actions_file}};
  j["bench"] = {{"group_sizes", c.bench.group_sizes},
                {"seeds", c.bench.seeds},
                {"analytic", c.bench.analytic}};
  j["profile"] = {{"pca_k", c.profile.pca_k}};
  j["policy"] = {{"rho", c.policy.rho},
                 {"lambda", c.policy.lambda},
                 {"quality", c.policy.quality},
                 {"lr", c.policy.lr},
                 {"batch_size", c.policy.batch_size},
                 {"epochs", c.policy.epochs},
                 {"dataset", c.policy.dataset},
                 {"held_out", c.policy.held_out},
                 {"baseline", c.policy.baseline},
                 {"width", c.policy.width},
                 {"heads", c.policy.heads},
                 {"pooled_tokens", c.policy.pooled_tokens},
                 {"head_hidden", c.policy.head_hidden},
                 {"resume", c.policy.resume}};
  j["reports"] = {{"feature_log", c.reports.feature_log},
                  {"timing", c.reports.timing}};
  if (with_io) {
    j["output_dir"] = c.output_dir;
    j["threads"] = c.threads;
  }
  return j;
}

}  // namespace

std::string RunConfig::to_json(bool with_io) const {
  return to_json_object(*this, with_io).dump(2) + "\n";
}

std::uint64_t RunConfig::hash() const {
  json j = to_json_object(*this, false);
  // Resuming continues the same experiment.
  j["policy"].erase("resume");
  const std::string canon = j.dump();
  return fnv1a64(canon.data(), canon.size());
}

std::string RunConfig::hash_tag() const { return hex64(hash()).substr(0, 12); }

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section root(j, "");
  if (!j.is_object() || !j.contains("schema_version")) {
    throw ConfigError("config needs a schema_version field");
  }
  root.get("schema_version", c.schema_version);
  if (c.schema_version != kConfigSchemaVersion) {
    throw ConfigError("unsupported schema_version " +
                      std::to_string(c.schema_version));
  }
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  root.get("threads", c.threads);

  if (const json* m = root.child("model")) {
    Section s(*m, "model.");
    s.get("profile", c.model_profile);
    c.model = profile_preset(c.model_profile);
    s.get("depth", c.model.depth);
    s.get("width", c.model.width);
    s.get("tokens", c.model.tokens);
    s.get("heads", c.model.heads);
    s.get("cond_dim", c.model.cond_dim);
    s.get("in_channels", c.model.in_channels);
    s.get("mlp_ratio", c.model.mlp_ratio);
    s.get("seed", c.model.seed);
    s.finish();
  }
  if (const json* m = root.child("sampler")) {
    Section s(*m, "sampler.");
    s.get("steps", c.sampler.steps);
    s.get("steps_train", c.sampler.steps_train);
    s.get("noise", c.sampler.noise);
    s.get("beta_start", c.sampler.beta_start);
    s.get("beta_end", c.sampler.beta_end);
    s.get("eta", c.sampler.eta);
    s.finish();
  }
  if (const json* m = root.child("cache")) {
    Section s(*m, "cache.");
    s.get("mode", c.cache.mode);
    s.get("rho", c.cache.rho);
    s.get("window_end", c.cache.window_end);
    s.get("group_size", c.cache.group_size);
    s.get("cutoff", c.cache.cutoff);
    s.get("actions_file", c.cache.actions_file);
    s.finish();
  }
  if (const json* m = root.child("bench")) {
    Section s(*m, "bench.");
    s.get("group_sizes", c.bench.group_sizes);
    s.get("seeds", c.bench.seeds);
    s.get("analytic", c.bench.analytic);
    s.finish();
  }
  if (const json* m = root.child("profile")) {
    Section s(*m, "profile.");
    s.get("pca_k", c.profile.pca_k);
    s.finish();
  }
  if (const json* m = root.child("policy")) {
    Section s(*m, "policy.");
    s.get("rho", c.policy.rho);
    s.get("lambda", c.policy.lambda);
    s.get("quality", c.policy.quality);
    s.get("lr", c.policy.lr);
    s.get("batch_size", c.policy.batch_size);
    s.get("epochs", c.policy.epochs);
    s.get("dataset", c.policy.dataset);
    s.get("held_out", c.policy.held_out);
    s.get("baseline", c.policy.baseline);
    s.get("width", c.policy.width);
    s.get("heads", c.policy.heads);
    s.get("pooled_tokens", c.policy.pooled_tokens);
    s.get("head_hidden", c.policy.head_hidden);
    s.get("resume", c.policy.resume);
    s.finish();
  }
  if (const json* m = root.child("reports")) {
    Section s(*m, "reports.");
    s.get("feature_log", c.reports.feature_log);
    s.get("timing", c.reports.timing);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

namespace {

template <typename T>
T parse_number(const std::string& name, const std::string& text) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(text, &pos);
    if (pos != text.size() || text.front() == '-') throw std::invalid_argument("");
    return static_cast<T>(v);
  } catch (const std::exception&) {
    throw ConfigError(name + " must be a non-negative integer, got \"" + text +
                      "\"");
  }
}

}  // namespace

Overrides overrides_from_env(const std::map<std::string, std::string>& env) {
  Overrides o;
  if (auto it = env.find("BLOCKDANCE_SEED"); it != env.end()) {
    o.seed = parse_number<std::uint64_t>("BLOCKDANCE_SEED", it->second);
  }
  if (auto it = env.find("BLOCKDANCE_OUT"); it != env.end()) {
    o.output_dir = it->second;
  }
  if (auto it = env.find("BLOCKDANCE_THREADS"); it != env.end()) {
    o.threads = parse_number<int>("BLOCKDANCE_THREADS", it->second);
  }
  return o;
}

void apply_overrides(RunConfig& cfg, const Overrides& env,
                     const Overrides& flags) {
  for (const Overrides* o : {&env, &flags}) {
    if (o->seed) cfg.seed = *o->seed;
    if (o->output_dir) cfg.output_dir = *o->output_dir;
    if (o->threads) cfg.threads = *o->threads;
  }
  cfg.validate();
}

}  // namespace blockdance
