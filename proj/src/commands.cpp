#include "blockdance/harness/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "blockdance/ada/trainer.hpp"
#include "blockdance/cache/engine.hpp"
#include "blockdance/profiler/profiler.hpp"

namespace blockdance {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Stream ids for the per-seed draws of one run.
constexpr std::uint64_t kLatentStream = 1;
constexpr std::uint64_t kContextStream = 2;
constexpr std::uint64_t kSamplerStream = 3;

void write_text(const fs::path& path, const std::string& text,
                Artifacts& art) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
  art.files.push_back(path);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string());
}

int rho_steps_for(Real rho, int steps) {
  return static_cast<int>(std::floor(rho * steps));
}

struct RunInputs {
  MatrixR z_T;
  VectorR context;
};

RunInputs run_inputs(const DitConfig& cfg, std::uint64_t seed) {
  RngStream latent(seed, kLatentStream);
  RngStream ctx(seed, kContextStream);
  return {gaussian(latent, cfg.tokens, cfg.in_channels),
          gaussian(ctx, cfg.cond_dim)};
}

// Schedule for the configured mode; nullopt means every step is full.
std::optional<StepSchedule> schedule_for(const RunConfig& cfg,
                                         const std::string& mode, int n) {
  const int s = cfg.sampler.steps;
  if (mode == "full") return std::nullopt;
  if (mode == "blockdance") return build_schedule(cfg.schedule_policy(n));
  if (mode == "deepcache") return deepcache_style_schedule(s, n);
  const int rho = rho_steps_for(cfg.cache.rho, s);
  std::vector<int> u = read_actions_file(cfg.cache.actions_file);
  if (static_cast<int>(u.size()) != s - rho) {
    throw ConfigError("actions file has " + std::to_string(u.size()) +
                      " entries, expected " + std::to_string(s - rho));
  }
  return build_schedule_from_actions(u, rho);
}

struct RunOutcome {
  SampleResult result;
  std::string schedule;  // compact form, "full" for the plain sampler
  std::uint64_t peak_cache_bytes = 0;
};

RunOutcome run_sampler(const RunConfig& cfg, const DitModel& model,
                       std::uint64_t seed,
                       const std::optional<StepSchedule>& schedule,
                       const std::set<int>& taps, bool keep_x0) {
  const RunInputs in = run_inputs(model.config(), seed);
  RngStream rng(seed, kSamplerStream);
  SampleOptions opt;
  opt.keep_x0_predictions = keep_x0;
  opt.measure_wall_time = cfg.reports.timing;
  RunOutcome out;
  if (!schedule) {
    FullExecutor exec(model, taps);
    out.result = sample(model, cfg.sampler_plan(), cfg.noise_schedule(),
                        in.context, exec, in.z_T, rng, opt);
    out.schedule = "full";
    return out;
  }
  BlockDanceExecutor exec(model, *schedule, cfg.cutoff(), taps);
  out.result = sample(model, cfg.sampler_plan(), cfg.noise_schedule(),
                      in.context, exec, in.z_T, rng, opt);
  out.schedule = schedule_to_string(*schedule);
  out.peak_cache_bytes = exec.peak_cache_bytes();
  return out;
}

std::string run_stem(const RunConfig& cfg, const std::string& kind,
                     std::uint64_t seed) {
  return kind + "_" + cfg.hash_tag() + "_s" + std::to_string(seed);
}

std::set<int> all_blocks(int depth) {
  std::set<int> taps;
  for (int b = 1; b <= depth; ++b) taps.insert(b);
  return taps;
}

// Runs jobs [0, n) on up to `threads` workers; results land by index so the
// output order never depends on scheduling.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  const int workers = std::max(1, std::min(threads, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string matrix_csv(const MatrixR& m, const std::string& row_label,
                       const std::string& col_prefix, int col_base) {
  std::ostringstream out;
  out << row_label;
  for (Index j = 0; j < m.cols(); ++j) out << "," << col_prefix << j + col_base;
  out << "\n";
  for (Index i = 0; i < m.rows(); ++i) {
    out << i;
    for (Index j = 0; j < m.cols(); ++j) out << "," << format_real(m(i, j));
    out << "\n";
  }
  return out.str();
}

}  // namespace

std::vector<int> read_actions_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read actions file: " + path.string());
  std::vector<int> u;
  std::string tok;
  while (in >> tok) {
    if (tok != "0" && tok != "1") {
      throw ConfigError("actions file entries must be 0 or 1, got \"" + tok +
                        "\"");
    }
    u.push_back(tok == "1" ? 1 : 0);
  }
  return u;
}

Artifacts cli_generate(const RunConfig& cfg, std::ostream& log) {
  const DitModel model(cfg.model);
  const auto schedule = schedule_for(cfg, cfg.cache.mode, cfg.cache.group_size);
  const std::set<int> taps =
      cfg.reports.feature_log ? all_blocks(cfg.model.depth) : std::set<int>{};
  RunOutcome run;
  try {
    run = run_sampler(cfg, model, cfg.seed, schedule, taps, false);
  } catch (const StepError& e) {
    throw RuntimeFailure(e.what());
  }

  const fs::path dir(cfg.output_dir);
  ensure_dir(dir);
  const std::string stem = run_stem(cfg, cfg.cache.mode, cfg.seed);
  Artifacts art;
  save_tensor(dir / (stem + ".z0.tensor"), to_record(run.result.z0));
  art.files.push_back(dir / (stem + ".z0.tensor"));
  write_text(dir / (stem + ".trace.json"), trace_to_json(run.result.trace), art);
  if (cfg.reports.feature_log) {
    const fs::path fdir = dir / (stem + ".features");
    write_feature_log(record_features(run.result), fdir);
    art.files.push_back(fdir / "features.tensor");
    art.files.push_back(fdir / "features.json");
  }

  const MacSummary macs = mac_report(run.result.trace, cfg.model);
  ojson summary;
  summary["schema"] = "blockdance-run-summary/1";
  summary["config_hash"] = hex64(cfg.hash());
  summary["mode"] = cfg.cache.mode;
  summary["seed"] = cfg.seed;
  summary["schedule"] = run.schedule;
  summary["cutoff"] = cfg.cutoff();
  summary["total_macs"] = macs.total;
  summary["baseline_macs"] = macs.baseline;
  summary["saved_fraction"] = format_real(macs.saved_fraction);
  summary["peak_cache_bytes"] = run.peak_cache_bytes;
  summary["z0_checksum"] = hex64(checksum(run.result.z0));
  summary["weight_checksum"] = hex64(model.weight_checksum());
  write_text(dir / (stem + ".summary.json"), summary.dump(2) + "\n", art);
  write_text(dir / (stem + ".config.json"), cfg.to_json(false), art);

  log << "generate: " << cfg.cache.mode << " schedule " << run.schedule
      << ", " << macs.total << " MACs (saved "
      << format_real(macs.saved_fraction) << ") -> " << (dir / stem).string()
      << ".*\n";
  return art;
}

std::vector<BenchRow> bench_rows(const RunConfig& cfg) {
  std::vector<std::uint64_t> seeds = cfg.bench.seeds;
  if (seeds.empty()) seeds.push_back(cfg.seed);
  std::vector<int> ns = cfg.bench.group_sizes;
  std::sort(ns.begin(), ns.end());
  std::sort(seeds.begin(), seeds.end());

  std::vector<BenchRow> rows;
  for (int n : ns) {
    for (std::uint64_t seed : seeds) {
      BenchRow r;
      r.group_size = n;
      r.seed = seed;
      rows.push_back(r);
    }
  }

  if (cfg.bench.analytic) {
    for (auto& r : rows) {
      const StepSchedule sched = build_schedule(cfg.schedule_policy(r.group_size));
      const MacSummary m = predicted_macs(sched, cfg.model, cfg.cutoff());
      r.schedule = schedule_to_string(sched);
      r.total_macs = m.total;
      r.baseline_macs = m.baseline;
      r.saved_fraction = m.saved_fraction;
    }
    return rows;
  }

  const DitModel model(cfg.model);
  // Baseline runs keyed by (model, seed, plan); every row of a seed shares
  // one.
  std::map<std::string, MatrixR> baselines;
  std::vector<std::string> keys;
  for (std::uint64_t seed : seeds) {
    std::ostringstream key;
    key << hex64(model.weight_checksum()) << "/" << seed;
    for (int t : cfg.sampler_plan().timesteps) key << "," << t;
    keys.push_back(key.str());
  }
  std::vector<MatrixR> base_z0(seeds.size());
  parallel_for(static_cast<int>(seeds.size()), cfg.threads, [&](int i) {
    base_z0[static_cast<std::size_t>(i)] =
        run_sampler(cfg, model, seeds[static_cast<std::size_t>(i)],
                    std::nullopt, {}, false)
            .result.z0;
  });
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    baselines.emplace(keys[i], base_z0[i]);
  }
  std::map<std::uint64_t, const MatrixR*> by_seed;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    by_seed[seeds[i]] = &baselines.at(keys[i]);
  }

  parallel_for(static_cast<int>(rows.size()), cfg.threads, [&](int i) {
    BenchRow& r = rows[static_cast<std::size_t>(i)];
    const StepSchedule sched = build_schedule(cfg.schedule_policy(r.group_size));
    const RunOutcome run = run_sampler(cfg, model, r.seed, sched, {}, false);
    const MacSummary m = mac_report(run.result.trace, cfg.model);
    r.schedule = run.schedule;
    r.total_macs = m.total;
    r.baseline_macs = m.baseline;
    r.saved_fraction = m.saved_fraction;
    for (const auto& s : run.result.trace.steps) r.wall_nanos += s.wall_nanos;
    r.ssim = latent_ssim(*by_seed.at(r.seed), run.result.z0);
  });
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "N,seed,schedule,total_macs,baseline_macs,saved_fraction,speedup,"
         "wall_nanos,ssim\n";
  for (const auto& r : rows) {
    const Real speedup = r.total_macs == 0
                             ? 0.0
                             : static_cast<Real>(r.baseline_macs) /
                                   static_cast<Real>(r.total_macs);
    out << r.group_size << "," << r.seed << ",\"" << r.schedule << "\","
        << r.total_macs << "," << r.baseline_macs << ","
        << format_real(r.saved_fraction) << "," << format_real(speedup) << ","
        << r.wall_nanos << "," << (r.ssim ? format_real(*r.ssim) : "") << "\n";
  }
  return out.str();
}

Artifacts cli_bench(const RunConfig& cfg, std::ostream& log) {
  std::vector<BenchRow> rows;
  try {
    rows = bench_rows(cfg);
  } catch (const StepError& e) {
    throw RuntimeFailure(e.what());
  }
  const fs::path dir(cfg.output_dir);
  ensure_dir(dir);
  Artifacts art;
  const std::string stem = "bench_" + cfg.hash_tag();
  write_text(dir / (stem + ".csv"), bench_csv(rows), art);
  write_text(dir / (stem + ".config.json"), cfg.to_json(false), art);
  for (const auto& r : rows) {
    log << "bench: N=" << r.group_size << " seed=" << r.seed
        << " saved=" << format_real(r.saved_fraction)
        << (r.ssim ? " ssim=" + format_real(*r.ssim) : std::string()) << "\n";
  }
  return art;
}

namespace {

struct ProfileInputs {
  FeatureLog features;
  std::vector<MatrixR> x0;  // one per step
  std::vector<int> timesteps;
};

TensorRecord stack_records(const std::vector<MatrixR>& mats) {
  TensorRecord rec;
  if (mats.empty()) {
    rec.shape = {0, 0, 0};
    return rec;
  }
  rec.shape = {mats.size(), static_cast<std::uint64_t>(mats[0].rows()),
               static_cast<std::uint64_t>(mats[0].cols())};
  for (const auto& m : mats) {
    rec.data.insert(rec.data.end(), m.data(), m.data() + m.size());
  }
  return rec;
}

std::vector<MatrixR> unstack_records(const TensorRecord& rec) {
  if (rec.shape.size() != 3) throw IoError("x0 dump must be rank 3");
  const auto rows = static_cast<Index>(rec.shape[1]);
  const auto cols = static_cast<Index>(rec.shape[2]);
  std::vector<MatrixR> out;
  for (std::uint64_t i = 0; i < rec.shape[0]; ++i) {
    out.push_back(Eigen::Map<const MatrixR>(
        rec.data.data() + i * static_cast<std::uint64_t>(rows * cols), rows,
        cols));
  }
  return out;
}

}  // namespace

Artifacts cli_profile(const RunConfig& cfg, std::ostream& log,
                      const std::optional<fs::path>& from_log) {
  const int depth = cfg.model.depth;
  const int cutoff = cfg.cutoff();
  ProfileInputs in;
  const fs::path dir =
      fs::path(cfg.output_dir) / run_stem(cfg, "profile", cfg.seed);
  ensure_dir(dir);
  Artifacts art;

  if (from_log) {
    in.features = read_feature_log(*from_log / "features");
    in.x0 = unstack_records(load_tensor(*from_log / "x0.tensor"));
  } else {
    const DitModel model(cfg.model);
    RunOutcome run;
    try {
      run = run_sampler(cfg, model, cfg.seed, std::nullopt, all_blocks(depth),
                        true);
    } catch (const StepError& e) {
      throw RuntimeFailure(e.what());
    }
    in.features = record_features(run.result);
    in.x0 = run.result.x0_predictions;
    write_feature_log(in.features, dir / "features");
    art.files.push_back(dir / "features" / "features.tensor");
    art.files.push_back(dir / "features" / "features.json");
    save_tensor(dir / "x0.tensor", stack_records(in.x0));
    art.files.push_back(dir / "x0.tensor");
  }
  const int steps = in.features.step_count();
  if (static_cast<int>(in.x0.size()) != steps) {
    throw CompletenessError("x0 sequence and feature log disagree on steps");
  }
  for (int t = 0; t < steps; ++t) {
    const FeatureRecord* r = in.features.find(t, 1);
    if (!r) throw CompletenessError("feature log is missing step " + std::to_string(t));
    in.timesteps.push_back(r->train_timestep);
  }

  write_text(dir / "l2_surface.csv",
             matrix_csv(l2_surface(in.features, depth), "step", "block", 1),
             art);
  const MatrixR cos = cosine_matrix(in.features, cutoff);
  write_text(dir / ("cosine_block" + std::to_string(cutoff) + ".csv"),
             matrix_csv(cos, "step", "step", 0), art);

  {
    std::ostringstream out;
    out << "step,train_timestep,ssim_to_next,ssim_to_final\n";
    for (int t = 0; t < steps; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      out << t << "," << in.timesteps[ts] << ",";
      if (t + 1 < steps) out << format_real(latent_ssim(in.x0[ts], in.x0[ts + 1]));
      out << "," << format_real(latent_ssim(in.x0[ts], in.x0.back())) << "\n";
    }
    write_text(dir / "ssim_by_step.csv", out.str(), art);
  }

  {
    std::ostringstream proj, summary;
    const int k = cfg.profile.pca_k;
    proj << "step,token";
    for (int c = 1; c <= k; ++c) proj << ",pc" << c;
    proj << "\n";
    summary << "step,effective_k,captured_variance,total_variance\n";
    for (int t = 0; t < steps; ++t) {
      const PcaResult p = pca_project(in.features.find(t, cutoff)->values, k);
      if (!p.warning.empty()) log << "profile: step " << t << ": " << p.warning << "\n";
      for (Index i = 0; i < p.projection.rows(); ++i) {
        proj << t << "," << i;
        for (int c = 0; c < k; ++c) {
          proj << ",";
          if (c < p.effective_k) proj << format_real(p.projection(i, c));
        }
        proj << "\n";
      }
      summary << t << "," << p.effective_k << ","
              << format_real(p.captured_variance_fraction()) << ","
              << format_real(p.total_variance) << "\n";
    }
    write_text(dir / "pca_projection.csv", proj.str(), art);
    write_text(dir / "pca_summary.csv", summary.str(), art);
  }

  ojson manifest;
  manifest["schema"] = "blockdance-profile/1";
  manifest["config_hash"] = hex64(cfg.hash());
  manifest["steps"] = steps;
  manifest["depth"] = depth;
  manifest["cutoff_block"] = cutoff;
  manifest["pca_k"] = cfg.profile.pca_k;
  manifest["reanalysis"] = from_log.has_value();
  write_text(dir / "manifest.json", manifest.dump(2) + "\n", art);
  log << "profile: " << steps << " steps x " << depth << " blocks -> "
      << dir.string() << "\n";
  return art;
}

namespace {

struct PolicyEval {
  std::string method;
  int group_size = 0;  // 0 for the learned policy
  Real saved_fraction = 0;
  Real quality = 0;
  Real cache_steps = 0;
};

std::vector<int> actions_of(const StepSchedule& s, int rho_steps) {
  std::vector<int> u;
  for (int t = rho_steps; t < s.steps(); ++t) {
    u.push_back(s.kinds[static_cast<std::size_t>(t)] == ScheduleStep::kCache);
  }
  return u;
}

}  // namespace

Artifacts cli_train_policy(const RunConfig& cfg, std::ostream& log) {
  const DitModel model(cfg.model);
  const int s = cfg.sampler.steps;
  const int rho = rho_steps_for(cfg.policy.rho, s);
  const PolicyEnvironment env(model, cfg.noise_schedule(), cfg.sampler_plan(),
                              rho, cfg.cutoff());

  std::vector<PolicyInstance> dataset, held_out;
  for (int i = 0; i < cfg.policy.dataset; ++i) {
    dataset.push_back(env.synthetic(i, cfg.seed));
  }
  for (int i = 0; i < cfg.policy.held_out; ++i) {
    held_out.push_back(env.synthetic(cfg.policy.dataset + i, cfg.seed));
  }

  const QualityFn quality =
      cfg.policy.quality == "exact" ? QualityFn(exact_match_quality)
                                    : QualityFn(quality_proxy);
  TrainHyper hyper;
  hyper.epochs = cfg.policy.epochs;
  hyper.batch_size = cfg.policy.batch_size;
  hyper.adam.lr = cfg.policy.lr;
  hyper.use_baseline = cfg.policy.baseline;
  hyper.seed = cfg.seed;

  const fs::path dir =
      fs::path(cfg.output_dir) / run_stem(cfg, "policy", cfg.seed);
  ensure_dir(dir);
  const fs::path ckpt = dir / "checkpoint";

  DecisionNet net(cfg.decision_net_config(env.actions()));
  std::optional<PolicyTrainer::ResumeState> resume;
  if (!cfg.policy.resume.empty()) {
    LoadedPolicy loaded = load_policy_checkpoint(cfg.policy.resume);
    if (!(loaded.net.config() == net.config())) {
      throw ConfigError("resume checkpoint was trained with a different network");
    }
    net = std::move(loaded.net);
    resume = loaded.state;
  }
  PolicyTrainer trainer(env, dataset, RewardConfig{cfg.policy.lambda}, quality,
                        hyper, net);
  if (resume) trainer.restore(trainer.net().params(), *resume);

  // The curve of a resumed run is the prefix of the interrupted run's curve.
  std::vector<std::string> curve;
  const fs::path curve_path = dir / "curve.csv";
  const std::string header =
      "epoch,mean_R,mean_C,mean_Q,mean_sum_u,mean_sum_m\n";
  if (resume && !cfg.policy.resume.empty()) {
    std::ifstream old(fs::path(cfg.policy.resume).parent_path() / "curve.csv");
    std::string line;
    std::getline(old, line);
    while (static_cast<int>(curve.size()) < trainer.epochs_done() &&
           std::getline(old, line)) {
      curve.push_back(line + "\n");
    }
  }
  auto write_curve = [&] {
    std::ofstream out(curve_path, std::ios::trunc);
    out << header;
    for (const auto& l : curve) out << l;
  };

  Artifacts art;
  if (!resume) save_policy_checkpoint(ckpt, trainer);
  while (trainer.epochs_done() < hyper.epochs) {
    EpochStats st;
    try {
      st = trainer.run_epoch();
    } catch (const TrainingError& e) {
      throw RuntimeFailure(std::string(e.what()) +
                           "; last good checkpoint: " + ckpt.string());
    }
    std::ostringstream row;
    row << st.epoch << "," << format_real(st.mean_reward) << ","
        << format_real(st.mean_compute) << "," << format_real(st.mean_quality)
        << "," << format_real(st.mean_cache_steps) << ","
        << format_real(st.mean_expected_cache_steps) << "\n";
    curve.push_back(row.str());
    save_policy_checkpoint(ckpt, trainer);
    write_curve();
    log << "train-policy: epoch " << st.epoch << " R=" << st.mean_reward
        << " sum_u=" << st.mean_cache_steps << "\n";
  }
  write_curve();
  art.files.push_back(curve_path);
  art.files.push_back(fs::path(ckpt).concat(".tensor"));
  art.files.push_back(fs::path(ckpt).concat(".json"));

  // Held-out comparison: the greedy policy against BlockDance-N with the
  // same prefix, all scored by the proxy against the full-compute result.
  std::vector<PolicyEval> evals;
  std::ostringstream per_instance;
  per_instance << "instance,actions,saved_fraction,quality\n";
  auto score = [&](const std::vector<int>& u) {
    const MacSummary m = predicted_macs(build_schedule_from_actions(u, rho),
                                        cfg.model, cfg.cutoff());
    return m.saved_fraction;
  };
  {
    PolicyEval e{"policy-greedy", 0, 0, 0, 0};
    for (const auto& inst : held_out) {
      const std::vector<int> u =
          greedy_actions(decide(trainer.net(), inst.z_rho, inst.context));
      const Real q = quality_proxy(env.rollout(inst, u).z0, inst.z0_reference);
      const Real saved = score(u);
      std::string us;
      for (int a : u) us += a ? '1' : '0';
      per_instance << inst.id << "," << us << "," << format_real(saved) << ","
                   << format_real(q) << "\n";
      e.saved_fraction += saved;
      e.quality += q;
      e.cache_steps += std::accumulate(u.begin(), u.end(), 0);
    }
    evals.push_back(e);
  }
  std::vector<int> ns = cfg.bench.group_sizes;
  std::sort(ns.begin(), ns.end());
  for (int n : ns) {
    SchedulePolicy pol = cfg.schedule_policy(n);
    pol.rho = cfg.policy.rho;
    const std::vector<int> u = actions_of(build_schedule(pol), rho);
    PolicyEval e{"blockdance", n, 0, 0, 0};
    for (const auto& inst : held_out) {
      e.saved_fraction += score(u);
      e.quality += quality_proxy(env.rollout(inst, u).z0, inst.z0_reference);
      e.cache_steps += std::accumulate(u.begin(), u.end(), 0);
    }
    evals.push_back(e);
  }
  const Real count = std::max<Real>(1, static_cast<Real>(held_out.size()));
  for (auto& e : evals) {
    e.saved_fraction /= count;
    e.quality /= count;
    e.cache_steps /= count;
  }
  std::ostringstream pareto;
  pareto << "method,N,saved_fraction,quality,mean_sum_u,dominated\n";
  for (const auto& e : evals) {
    bool dominated = false;
    for (const auto& o : evals) {
      if (&o == &e) continue;
      if (o.saved_fraction >= e.saved_fraction && o.quality >= e.quality &&
          (o.saved_fraction > e.saved_fraction || o.quality > e.quality)) {
        dominated = true;
      }
    }
    pareto << e.method << "," << e.group_size << ","
           << format_real(e.saved_fraction) << "," << format_real(e.quality)
           << "," << format_real(e.cache_steps) << ","
           << (dominated ? 1 : 0) << "\n";
  }
  write_text(dir / "held_out.csv", per_instance.str(), art);
  write_text(dir / "pareto.csv", pareto.str(), art);
  write_text(dir / "config.json", cfg.to_json(false), art);
  log << "train-policy: " << trainer.epochs_done() << " epochs -> "
      << dir.string() << "\n";
  return art;
}

void cli_inspect_trace(const fs::path& path, std::ostream& out) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read trace: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  RunTrace trace;
  try {
    j = nlohmann::json::parse(ss.str());
    if (j.at("schema") != "blockdance-run-trace/1") {
      throw RuntimeFailure("unknown trace schema");
    }
    trace = trace_from_json(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure(std::string("malformed trace: ") + e.what());
  } catch (const ConfigError& e) {
    throw RuntimeFailure(std::string("malformed trace: ") + e.what());
  }
  int counts[3] = {0, 0, 0};
  std::string kinds;
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const StepRecord& r = trace.steps[i];
    if (r.step_index != static_cast<int>(i)) {
      throw RuntimeFailure("trace step " + std::to_string(i) +
                           " has step_index " + std::to_string(r.step_index));
    }
    if (i > 0 && r.train_timestep >= trace.steps[i - 1].train_timestep) {
      throw RuntimeFailure("trace timesteps are not strictly decreasing");
    }
    if (r.kind == StepKind::kReuse && counts[1] == 0) {
      throw RuntimeFailure("reuse step " + std::to_string(i) +
                           " has no earlier cache step");
    }
    ++counts[static_cast<int>(r.kind)];
    kinds += r.kind == StepKind::kFull    ? 'F'
             : r.kind == StepKind::kCache ? 'C'
                                          : 'R';
  }
  if (j.at("total_macs").get<std::uint64_t>() != trace.total_macs()) {
    throw RuntimeFailure("total_macs does not equal the sum of step MACs");
  }
  out << "steps: " << trace.steps.size() << "\n"
      << "full: " << counts[0] << "  cache: " << counts[1]
      << "  reuse: " << counts[2] << "\n"
      << "kinds: " << kinds << "\n"
      << "total_macs: " << trace.total_macs() << "\n";
}

}  // namespace blockdance
