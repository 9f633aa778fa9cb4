#include <string>

#include "blockdance/cache/engine.hpp"
#include "doctest.h"

using namespace blockdance;

namespace {

std::string kinds_of(const StepSchedule& s) {
  std::string out;
  for (auto k : s.kinds) out += static_cast<char>(k);
  return out;
}

DitConfig small() {
  DitConfig cfg;
  cfg.depth = 4;
  cfg.width = 16;
  cfg.tokens = 4;
  cfg.heads = 2;
  cfg.cond_dim = 8;
  cfg.in_channels = 2;
  cfg.mlp_ratio = 2;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("default cutoff scales 20 of 28") {
  CHECK(default_cutoff(28) == 20);
  CHECK(default_cutoff(8) == 6);
  CHECK(default_cutoff(4) == 3);
  CHECK(default_cutoff(2) == 1);
}

TEST_CASE("blockdance schedule layout for s = 30") {
  const StepSchedule s2 = build_schedule({30, 0.4, 0.95, 2, 20});
  CHECK(s2.prefix == 12);
  CHECK(s2.window_end == 28);
  CHECK(s2.cache_count() == 22);
  CHECK(s2.reuse_count() == 8);
  CHECK(schedule_to_string(s2) == "CCCCCCCCCCCC|CR CR CR CR CR CR CR CR|CC");
  CHECK(kinds_of(s2) == "CCCCCCCCCCCCCRCRCRCRCRCRCRCRCC");

  const StepSchedule s1 = build_schedule({30, 0.4, 0.95, 1, 20});
  CHECK(s1.reuse_count() == 0);

  const StepSchedule s3 = build_schedule({30, 0.4, 0.95, 3, 20});
  CHECK(schedule_to_string(s3) == "CCCCCCCCCCCC|CRR CRR CRR CRR CRR C|CC");

  int previous = -1;
  for (int n = 1; n <= 6; ++n) {
    const int reuse = build_schedule({30, 0.4, 0.95, n, 20}).reuse_count();
    CHECK(reuse >= previous);
    previous = reuse;
  }
}

TEST_CASE("schedule strings round trip and reject malformed input") {
  for (int n = 1; n <= 5; ++n) {
    const StepSchedule s = build_schedule({30, 0.25, 0.95, n, 20});
    CHECK(schedule_from_string(schedule_to_string(s)) == s);
  }
  CHECK_THROWS_AS(schedule_from_string("CC|CR"), ScheduleError);
  CHECK_THROWS_AS(schedule_from_string("CR|CR|C"), ScheduleError);
  CHECK_THROWS_AS(schedule_from_string("C|CX|C"), ScheduleError);
}

TEST_CASE("deepcache-style schedule differs only outside the window") {
  const StepSchedule dc = deepcache_style_schedule(30, 2);
  CHECK(dc.cache_count() == 15);
  CHECK(dc.reuse_count() == 15);
  const StepSchedule bd = build_schedule({30, 0.4, 0.95, 2, 20});
  for (int j = 12; j < 28; ++j) CHECK(dc.kinds[j] == bd.kinds[j]);
  int differing = 0;
  for (int j = 0; j < 30; ++j) differing += dc.kinds[j] != bd.kinds[j];
  CHECK(differing == 7);
}

TEST_CASE("validation rejects a reuse without a prior cache") {
  StepSchedule s;
  s.kinds = {ScheduleStep::kReuse, ScheduleStep::kCache};
  s.prefix = 0;
  s.window_end = 2;
  CHECK_THROWS_AS(validate_schedule(s), ScheduleError);
  CHECK_THROWS_AS(validate_schedule(StepSchedule{}), ScheduleError);
  CHECK_THROWS_AS(build_schedule_from_actions({1, 0}, 0), ScheduleError);
  CHECK_THROWS_AS(build_schedule_from_actions({2}, 1), ScheduleError);
}

TEST_CASE("action schedules put the prefix first") {
  const StepSchedule s = build_schedule_from_actions({1, 0, 0, 1}, 3);
  CHECK(kinds_of(s) == "CCCCRRC");
  CHECK(s.prefix == 3);
  CHECK(s.window_end == 7);
}

TEST_CASE("feature store keeps the latest cache step") {
  FeatureCacheStore store;
  CHECK_FALSE(store.has_entry());
  CHECK_THROWS(store.entry());
  store.update({2, 500, MatrixR::Ones(4, 16)}, 3);
  CHECK(store.source_step() == 3);
  CHECK(store.bytes() == 4 * 16 * sizeof(double));
  store.update({2, 400, MatrixR::Zero(4, 16)}, 5);
  CHECK(store.source_step() == 5);
  CHECK(store.entry().step == 400);
}

TEST_CASE("executor follows the schedule and records sources") {
  const DitConfig cfg = small();
  const DitModel model(cfg);
  const NoiseSchedule sched = make_linear_schedule(1000);
  const SamplerPlan plan = make_uniform_plan(10, 1000);
  const StepSchedule s = build_schedule({10, 0.2, 0.9, 3, 2});
  BlockDanceExecutor exec(model, s, 2);
  RngStream rng(0, 0), init(1, 1);
  const MatrixR zT = gaussian(init, cfg.tokens, cfg.in_channels);
  const VectorR ctx = gaussian(init, cfg.cond_dim);
  const SampleResult r = sample(model, plan, sched, ctx, exec, zT, rng);
  REQUIRE(r.trace.steps.size() == 10);
  for (int j = 0; j < 10; ++j) {
    const auto& rec = r.trace.steps[j];
    if (s.kinds[j] == ScheduleStep::kCache) {
      CHECK(rec.kind == StepKind::kCache);
      CHECK(rec.blocks_executed == 4);
      CHECK(exec.reuse_sources()[j] == -1);
    } else {
      CHECK(rec.kind == StepKind::kReuse);
      CHECK(rec.blocks_executed == 2);
      CHECK(s.kinds[exec.reuse_sources()[j]] == ScheduleStep::kCache);
      CHECK(exec.reuse_sources()[j] < j);
    }
  }
  CHECK(exec.peak_cache_bytes() == cfg.tokens * cfg.width * sizeof(double));
  const MacSummary rep = mac_report(r.trace, cfg);
  CHECK(rep.total == r.trace.total_macs());
  CHECK(rep.total == predicted_macs(s, cfg, 2).total);
  CHECK(rep.baseline == 10 * mac_count(cfg, 4));
}

TEST_CASE("executor rejects a schedule that reuses before caching") {
  const DitConfig cfg = small();
  const DitModel model(cfg);
  StepSchedule bad;
  bad.kinds = {ScheduleStep::kReuse};
  bad.window_end = 1;
  CHECK_THROWS_AS(BlockDanceExecutor(model, bad, 2), ScheduleError);
}
