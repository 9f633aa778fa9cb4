#include "blockdance/cache/engine.hpp"

#include <algorithm>
#include <cmath>

namespace blockdance {

int default_cutoff(int depth) {
  const int scaled =
      static_cast<int>(std::lround(static_cast<Real>(depth) * 20.0 / 28.0));
  return std::clamp(scaled, 1, std::max(1, depth - 1));
}

void SchedulePolicy::validate(int depth) const {
  if (steps < 1) throw ConfigError("schedule policy: steps must be >= 1");
  if (!(0 <= rho && rho <= window_end && window_end <= 1)) {
    throw ConfigError("schedule policy: need 0 <= rho <= window_end <= 1");
  }
  if (group_size < 1) throw ConfigError("schedule policy: N must be >= 1");
  if (cutoff < 1 || cutoff > depth - 1) {
    throw ConfigError("schedule policy: cutoff must be in [1, depth - 1]");
  }
}

SchedulePolicy SchedulePolicy::blockdance(int steps, int group_size,
                                          int depth) {
  return SchedulePolicy{steps, 0.40, 0.95, group_size, default_cutoff(depth)};
}

SchedulePolicy SchedulePolicy::blockdance_early(int steps, int group_size,
                                                int depth) {
  return SchedulePolicy{steps, 0.25, 0.95, group_size, default_cutoff(depth)};
}

int StepSchedule::cache_count() const {
  return static_cast<int>(
      std::count(kinds.begin(), kinds.end(), ScheduleStep::kCache));
}

int StepSchedule::reuse_count() const {
  return steps() - cache_count();
}

void validate_schedule(const StepSchedule& s) {
  if (s.kinds.empty()) throw ScheduleError("schedule is empty");
  if (s.kinds.front() != ScheduleStep::kCache) {
    throw ScheduleError("schedule must start with a cache step");
  }
  if (s.prefix < 0 || s.prefix > s.window_end || s.window_end > s.steps()) {
    throw ScheduleError("schedule window bounds out of order");
  }
  for (int j = 0; j < s.prefix; ++j) {
    if (s.kinds[static_cast<std::size_t>(j)] != ScheduleStep::kCache) {
      throw ScheduleError("reuse step inside the cache-only prefix");
    }
  }
  for (int j = s.window_end; j < s.steps(); ++j) {
    if (s.kinds[static_cast<std::size_t>(j)] != ScheduleStep::kCache) {
      throw ScheduleError("reuse step inside the cache-only suffix");
    }
  }
}

StepSchedule build_schedule(const SchedulePolicy& policy) {
  if (policy.steps < 1 || policy.group_size < 1 ||
      !(0 <= policy.rho && policy.rho <= policy.window_end &&
        policy.window_end <= 1)) {
    throw ConfigError("build_schedule: invalid policy");
  }
  const int s = policy.steps;
  StepSchedule out;
  out.kinds.assign(static_cast<std::size_t>(s), ScheduleStep::kCache);
  out.prefix = static_cast<int>(std::floor(policy.rho * s));
  out.window_end = std::max(out.prefix,
                            static_cast<int>(std::floor(policy.window_end * s)));
  for (int j = out.prefix; j < out.window_end; ++j) {
    if ((j - out.prefix) % policy.group_size != 0) {
      out.kinds[static_cast<std::size_t>(j)] = ScheduleStep::kReuse;
    }
  }
  return out;
}

StepSchedule build_schedule_from_actions(const std::vector<int>& actions,
                                         int rho_steps) {
  if (rho_steps < 1) {
    throw ScheduleError("action schedule needs at least one prefix step");
  }
  StepSchedule out;
  out.kinds.assign(static_cast<std::size_t>(rho_steps), ScheduleStep::kCache);
  for (int u : actions) {
    if (u != 0 && u != 1) throw ScheduleError("actions must be binary");
    out.kinds.push_back(u == 1 ? ScheduleStep::kCache : ScheduleStep::kReuse);
  }
  out.prefix = rho_steps;
  out.window_end = out.steps();
  return out;
}

StepSchedule deepcache_style_schedule(int steps, int group_size) {
  if (group_size < 1) throw ConfigError("deepcache schedule: N must be >= 1");
  return build_schedule(SchedulePolicy{steps, 0.0, 1.0, group_size, 1});
}

std::string schedule_to_string(const StepSchedule& s) {
  std::string out;
  for (int j = 0; j < s.prefix; ++j) out += 'C';
  out += '|';
  for (int j = s.prefix; j < s.window_end; ++j) {
    const auto k = s.kinds[static_cast<std::size_t>(j)];
    if (k == ScheduleStep::kCache && j > s.prefix) out += ' ';
    out += static_cast<char>(k);
  }
  out += '|';
  for (int j = s.window_end; j < s.steps(); ++j) out += 'C';
  return out;
}

StepSchedule schedule_from_string(const std::string& text) {
  const auto bar1 = text.find('|');
  const auto bar2 = bar1 == std::string::npos ? bar1 : text.find('|', bar1 + 1);
  if (bar2 == std::string::npos || text.find('|', bar2 + 1) != std::string::npos) {
    throw ScheduleError("schedule string needs exactly two '|'");
  }
  StepSchedule s;
  auto push_run = [&](std::string_view run) {
    for (char c : run) {
      if (c != 'C') throw ScheduleError("prefix/suffix may only contain 'C'");
      s.kinds.push_back(ScheduleStep::kCache);
    }
  };
  push_run(std::string_view(text).substr(0, bar1));
  s.prefix = s.steps();
  const std::string_view window =
      std::string_view(text).substr(bar1 + 1, bar2 - bar1 - 1);
  for (std::size_t i = 0; i < window.size(); ++i) {
    const char c = window[i];
    if (c == ' ') {
      if (i == 0 || i + 1 >= window.size() || window[i + 1] != 'C' ||
          window[i - 1] == ' ') {
        throw ScheduleError("misplaced group separator");
      }
      continue;
    }
    if (c == 'C') {
      if (i > 0 && window[i - 1] != ' ') {
        throw ScheduleError("cache step inside a group must start it");
      }
      s.kinds.push_back(ScheduleStep::kCache);
    } else if (c == 'R') {
      s.kinds.push_back(ScheduleStep::kReuse);
    } else {
      throw ScheduleError(std::string("unexpected character '") + c + "'");
    }
  }
  s.window_end = s.steps();
  push_run(std::string_view(text).substr(bar2 + 1));
  validate_schedule(s);
  return s;
}

const BlockFeature& FeatureCacheStore::entry() const {
  if (!entry_) throw ScheduleError("feature cache is empty");
  return *entry_;
}

void FeatureCacheStore::update(BlockFeature feature, int step_index) {
  entry_ = std::move(feature);
  source_step_ = step_index;
}

std::uint64_t FeatureCacheStore::bytes() const {
  if (!entry_) return 0;
  return static_cast<std::uint64_t>(entry_->values.size()) * sizeof(Real);
}

ExecuteResult execute_step(ScheduleStep kind, const DitModel& model,
                           const MatrixR& z_t, const Conditioning& cond,
                           int cutoff, FeatureCacheStore& store,
                           int step_index) {
  ExecuteResult out;
  if (kind == ScheduleStep::kCache) {
    out.forward = model.forward_full(z_t, cond, {cutoff});
    store.update(out.forward.tapped.front(), step_index);
  } else {
    if (!store.has_entry()) {
      throw ScheduleError("reuse step at " + std::to_string(step_index) +
                          " with an empty feature cache");
    }
    out.forward = model.forward_from_block(store.entry(), cond);
  }
  out.blocks_executed = out.forward.blocks_evaluated;
  return out;
}

BlockDanceExecutor::BlockDanceExecutor(const DitModel& model,
                                       StepSchedule schedule, int cutoff,
                                       std::set<int> extra_taps)
    : model_(model),
      schedule_(std::move(schedule)),
      cutoff_(cutoff),
      extra_taps_(std::move(extra_taps)) {
  if (cutoff_ < 1 || cutoff_ > model_.config().depth - 1) {
    throw ConfigError("cutoff must be in [1, depth - 1]");
  }
  validate_schedule(schedule_);
}

StepOutput BlockDanceExecutor::run(int step_index, const MatrixR& z_t,
                                   const Conditioning& cond) {
  if (step_index < 0 || step_index >= schedule_.steps()) {
    throw ScheduleError("step outside schedule");
  }
  const ScheduleStep kind = schedule_.kinds[static_cast<std::size_t>(step_index)];
  StepOutput out;
  if (reuse_sources_.size() <= static_cast<std::size_t>(step_index)) {
    reuse_sources_.resize(static_cast<std::size_t>(step_index) + 1, -1);
  }
  if (kind == ScheduleStep::kCache && !extra_taps_.empty()) {
    std::set<int> taps = extra_taps_;
    taps.insert(cutoff_);
    ForwardResult fwd = model_.forward_full(z_t, cond, taps);
    for (const auto& f : fwd.tapped) {
      if (f.block_index == cutoff_) store_.update(f, step_index);
    }
    for (auto& f : fwd.tapped) {
      if (extra_taps_.count(f.block_index) != 0) out.tapped.push_back(std::move(f));
    }
    out.eps = std::move(fwd.eps);
    out.blocks_executed = fwd.blocks_evaluated;
    out.macs = fwd.macs;
  } else {
    if (kind == ScheduleStep::kReuse) {
      reuse_sources_[static_cast<std::size_t>(step_index)] = store_.source_step();
    }
    ExecuteResult r =
        execute_step(kind, model_, z_t, cond, cutoff_, store_, step_index);
    out.eps = std::move(r.forward.eps);
    out.blocks_executed = r.blocks_executed;
    out.macs = r.forward.macs;
  }
  out.kind = kind == ScheduleStep::kCache ? StepKind::kCache : StepKind::kReuse;
  peak_bytes_ = std::max(peak_bytes_, store_.bytes());
  return out;
}

MacSummary mac_report(const RunTrace& trace, const DitConfig& cfg) {
  MacSummary m;
  for (const auto& s : trace.steps) {
    const ForwardEntry entry = s.kind == StepKind::kReuse
                                   ? ForwardEntry::kCachedFeature
                                   : ForwardEntry::kInput;
    m.total += mac_count(cfg, s.blocks_executed, entry);
    m.baseline += mac_count(cfg, cfg.depth);
  }
  m.saved_fraction =
      m.baseline == 0 ? 0.0
                      : 1.0 - static_cast<Real>(m.total) /
                                  static_cast<Real>(m.baseline);
  return m;
}

MacSummary predicted_macs(const StepSchedule& schedule, const DitConfig& cfg,
                          int cutoff) {
  RunTrace trace;
  for (int j = 0; j < schedule.steps(); ++j) {
    StepRecord r;
    r.step_index = j;
    if (schedule.kinds[static_cast<std::size_t>(j)] == ScheduleStep::kCache) {
      r.kind = StepKind::kCache;
      r.blocks_executed = cfg.depth;
    } else {
      r.kind = StepKind::kReuse;
      r.blocks_executed = cfg.depth - cutoff;
    }
    trace.steps.push_back(r);
  }
  return mac_report(trace, cfg);
}

}  // namespace blockdance
