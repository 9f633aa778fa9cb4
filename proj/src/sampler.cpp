#include "blockdance/diffusion/sampler.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "json.hpp"

namespace blockdance {

Real NoiseSchedule::alpha_bar_at(int t) const {
  if (t == -1) return 1.0;
  if (t < 0 || t >= steps_train()) {
    throw std::out_of_range("timestep " + std::to_string(t) +
                            " outside schedule");
  }
  return alpha_bar[static_cast<std::size_t>(t)];
}

NoiseSchedule make_linear_schedule(int steps_train, Real beta_start,
                                   Real beta_end) {
  if (steps_train < 1) throw ConfigError("schedule: steps_train must be >= 1");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1)) {
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.beta.resize(static_cast<std::size_t>(steps_train));
  s.alpha_bar.resize(s.beta.size());
  Real running = 1.0;
  for (int i = 0; i < steps_train; ++i) {
    const Real frac = steps_train == 1 ? 0.0 : Real(i) / Real(steps_train - 1);
    const Real b = beta_start + (beta_end - beta_start) * frac;
    s.beta[static_cast<std::size_t>(i)] = b;
    running *= 1.0 - b;
    s.alpha_bar[static_cast<std::size_t>(i)] = running;
  }
  return s;
}

NoiseSchedule make_cosine_schedule(int steps_train) {
  if (steps_train < 1) throw ConfigError("schedule: steps_train must be >= 1");
  constexpr Real offset = 0.008;
  auto f = [&](Real t) {
    const Real x = (t / steps_train + offset) / (1 + offset) *
                   std::numbers::pi / 2;
    return std::cos(x) * std::cos(x);
  };
  NoiseSchedule s;
  Real running = 1.0;
  for (int i = 0; i < steps_train; ++i) {
    const Real b = std::min(1.0 - f(i + 1) / f(i), 0.999);
    s.beta.push_back(b);
    running *= 1.0 - b;
    s.alpha_bar.push_back(running);
  }
  return s;
}

void SamplerPlan::validate(const NoiseSchedule& sched) const {
  if (timesteps.empty()) throw ConfigError("plan: no timesteps");
  for (std::size_t j = 0; j < timesteps.size(); ++j) {
    if (timesteps[j] < 0 || timesteps[j] >= sched.steps_train()) {
      throw ConfigError("plan: timestep outside schedule");
    }
    if (j > 0 && timesteps[j] >= timesteps[j - 1]) {
      throw ConfigError("plan: timesteps must be strictly decreasing");
    }
  }
  if (!(eta >= 0 && eta <= 1)) throw ConfigError("plan: eta must be in [0, 1]");
}

SamplerPlan make_uniform_plan(int s, int steps_train, Real eta) {
  if (s < 1 || s > steps_train) {
    throw ConfigError("plan: need 1 <= steps <= steps_train");
  }
  SamplerPlan plan;
  plan.eta = eta;
  for (int j = s - 1; j >= 0; --j) {
    plan.timesteps.push_back(static_cast<int>(
        std::lround(static_cast<Real>(j) * steps_train / s)));
  }
  return plan;
}

MatrixR forward_diffuse(const MatrixR& z0, const MatrixR& eps, int t,
                        const NoiseSchedule& sched) {
  if (z0.rows() != eps.rows() || z0.cols() != eps.cols()) {
    throw DimensionError("forward_diffuse: noise shape mismatch");
  }
  const Real ab = sched.alpha_bar_at(t);
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

MatrixR forward_diffuse(const MatrixR& z0, int t, const NoiseSchedule& sched,
                        RngStream& rng) {
  return forward_diffuse(z0, gaussian(rng, z0.rows(), z0.cols()), t, sched);
}

MatrixR predict_x0(const MatrixR& z_t, const MatrixR& eps, int t,
                   const NoiseSchedule& sched) {
  const Real ab = sched.alpha_bar_at(t);
  if (!(ab > 0)) throw SingularityError("predict_x0: alpha_bar is zero");
  return (z_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
}

Real ddim_sigma(int t, int t_prev, const NoiseSchedule& sched, Real eta) {
  if (eta == 0) return 0;
  const Real ab = sched.alpha_bar_at(t);
  const Real ab_prev = sched.alpha_bar_at(t_prev);
  return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) *
         std::sqrt(1.0 - ab / ab_prev);
}

MatrixR ddim_step(const MatrixR& z_t, const MatrixR& eps, int t, int t_prev,
                  const NoiseSchedule& sched, Real eta, RngStream& rng) {
  if (!(t > t_prev && t_prev >= -1)) {
    throw ConfigError("ddim_step: need t > t_prev");
  }
  const Real ab_prev = sched.alpha_bar_at(t_prev);
  const Real sigma = ddim_sigma(t, t_prev, sched, eta);
  const Real dir_var = 1.0 - ab_prev - sigma * sigma;
  if (dir_var < 0) {
    throw ConfigError("ddim_step: negative direction variance");
  }
  MatrixR z_prev = std::sqrt(ab_prev) * predict_x0(z_t, eps, t, sched) +
                   std::sqrt(dir_var) * eps;
  if (sigma > 0) z_prev += sigma * gaussian(rng, z_t.rows(), z_t.cols());
  return z_prev;
}

std::string to_string(StepKind kind) {
  switch (kind) {
    case StepKind::kFull: return "full";
    case StepKind::kCache: return "cache";
    case StepKind::kReuse: return "reuse";
  }
  return "full";
}

StepKind step_kind_from_string(const std::string& s) {
  if (s == "full") return StepKind::kFull;
  if (s == "cache") return StepKind::kCache;
  if (s == "reuse") return StepKind::kReuse;
  throw ConfigError("unknown step kind: " + s);
}

std::uint64_t RunTrace::total_macs() const {
  std::uint64_t total = 0;
  for (const auto& s : steps) total += s.macs;
  return total;
}

StepOutput FullExecutor::run(int, const MatrixR& z_t,
                             const Conditioning& cond) {
  ForwardResult fwd = model_.forward_full(z_t, cond, taps_);
  StepOutput out;
  out.eps = std::move(fwd.eps);
  out.kind = StepKind::kFull;
  out.blocks_executed = fwd.blocks_evaluated;
  out.macs = fwd.macs;
  out.tapped = std::move(fwd.tapped);
  return out;
}

SampleResult sample(const DitModel& model, const SamplerPlan& plan,
                    const NoiseSchedule& sched, const VectorR& context,
                    StepExecutor& executor, const MatrixR& z_start,
                    RngStream& rng, const SampleOptions& options) {
  plan.validate(sched);
  const int s = plan.steps();
  if (options.start_step < 0 || options.start_step > s) {
    throw ConfigError("sample: start_step outside plan");
  }
  const int stop = options.stop_step < 0 ? s : options.stop_step;
  if (stop < options.start_step || stop > s) {
    throw ConfigError("sample: stop_step outside plan");
  }
  SampleResult result;
  MatrixR z = z_start;
  for (int j = options.start_step; j < stop; ++j) {
    const int t = plan.timesteps[static_cast<std::size_t>(j)];
    const int t_prev =
        j + 1 < s ? plan.timesteps[static_cast<std::size_t>(j + 1)] : -1;
    const Conditioning cond =
        make_conditioning(model.config(), static_cast<Real>(t), context);

    const auto start = std::chrono::steady_clock::now();
    StepOutput out;
    try {
      out = executor.run(j, z, cond);
    } catch (const std::exception& e) {
      throw StepError(j, e.what());
    }
    if (options.keep_x0_predictions) {
      result.x0_predictions.push_back(predict_x0(z, out.eps, t, sched));
    }
    z = ddim_step(z, out.eps, t, t_prev, sched, plan.eta, rng);
    const auto finish = std::chrono::steady_clock::now();

    StepRecord rec;
    rec.step_index = j;
    rec.train_timestep = t;
    rec.kind = out.kind;
    rec.blocks_executed = out.blocks_executed;
    rec.macs = out.macs;
    if (options.measure_wall_time) {
      rec.wall_nanos =
          std::chrono::duration_cast<std::chrono::nanoseconds>(finish - start)
              .count();
    }
    result.trace.steps.push_back(rec);
    result.taps.push_back(std::move(out.tapped));
  }
  result.z0 = std::move(z);
  return result;
}

std::string trace_to_json(const RunTrace& trace) {
  nlohmann::ordered_json j;
  j["schema"] = "blockdance-run-trace/1";
  j["steps"] = nlohmann::ordered_json::array();
  for (const auto& s : trace.steps) {
    nlohmann::ordered_json r;
    r["step_index"] = s.step_index;
    r["train_timestep"] = s.train_timestep;
    r["kind"] = to_string(s.kind);
    r["blocks_executed"] = s.blocks_executed;
    r["macs"] = s.macs;
    r["wall_nanos"] = s.wall_nanos;
    j["steps"].push_back(std::move(r));
  }
  j["total_macs"] = trace.total_macs();
  return j.dump(2) + "\n";
}

RunTrace trace_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  RunTrace trace;
  for (const auto& r : j.at("steps")) {
    StepRecord s;
    s.step_index = r.at("step_index");
    s.train_timestep = r.at("train_timestep");
    s.kind = step_kind_from_string(r.at("kind"));
    s.blocks_executed = r.at("blocks_executed");
    s.macs = r.at("macs");
    s.wall_nanos = r.at("wall_nanos");
    trace.steps.push_back(s);
  }
  return trace;
}

}  // namespace blockdance
