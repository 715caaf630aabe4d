#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"
#include "umbrella/eval/report.hpp"
#include "umbrella/pipeline.hpp"

using namespace umbrella;
using namespace umbrella::eval;

namespace {

/// Trace with constant speed `v`, `len` steps, and the given outcome.
EpisodeTrace make_trace(std::uint64_t seed, int len, double v, bool collision, double dt = 0.1) {
  EpisodeTrace tr;
  tr.seed = seed;
  tr.dt = dt;
  tr.start_v = v;
  tr.start_x = 10.0;
  for (int t = 0; t < len; ++t) {
    planner::StepTrace st;
    st.t = t;
    st.v = v;
    st.x = tr.start_x + v * dt * (t + 1);
    st.action = {0.1 * (t % 2), 0.0};
    st.reward.prog = 1.0;
    st.reward.lane = -0.5;
    st.reward.total = 0.5;
    tr.steps.push_back(st);
  }
  if (collision && len > 0) {
    tr.steps.back().reward.coll = -2.0;
    tr.steps.back().reward.total -= 2.0;
  }
  tr.collision = collision;
  tr.final_x = tr.steps.empty() ? tr.start_x : tr.steps.back().x;
  return tr;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

/// Redirects warnings into a vector for the lifetime of the object.
struct Capture {
  std::function<void(const std::string&)> old;
  explicit Capture(std::vector<std::string>& into) : old(warning_sink()) {
    warning_sink() = [&into](const std::string& m) { into.push_back(m); };
  }
  ~Capture() { warning_sink() = old; }
};

int count_fields(const std::string& line) { return static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1; }

}  // namespace

TEST(Metrics, HandComputedSummary) {
  // two successes of 100 and 140 steps, one collision after 20
  std::vector<EpisodeTrace> tr{make_trace(3, 100, 10.0, false), make_trace(1, 20, 5.0, true),
                               make_trace(2, 140, 8.0, false)};
  MetricsOptions opt;
  opt.resamples = 200;
  const auto m = compute_metrics(tr, opt);
  EXPECT_EQ(m.episodes, 3);
  EXPECT_DOUBLE_EQ(m.success_rate, 2.0 / 3.0);
  EXPECT_NEAR(m.mean_distance, (100.0 + 10.0 + 112.0) / 3.0, 1e-9);
  ASSERT_TRUE(m.mean_successful_time);
  EXPECT_NEAR(*m.mean_successful_time, 12.0, 1e-12);
  EXPECT_NEAR(m.mean_speed, (10.0 + 5.0 + 8.0) / 3.0, 1e-12);
  EXPECT_NEAR(m.mean_coll, (-2.0 / 20) / 3.0, 1e-12);
  EXPECT_NEAR(m.mean_reward, (0.5 + (0.5 - 0.1)) / 3.0 + 0.5 / 3.0, 1e-12);
  EXPECT_NEAR(m.mean_jerk, 0.1, 1e-12);
  EXPECT_LE(m.success_ci.lo, m.success_rate);
  EXPECT_GE(m.success_ci.hi, m.success_rate);
}

TEST(Metrics, AllCollisionsHaveNoSuccessfulTime) {
  std::vector<EpisodeTrace> tr{make_trace(1, 5, 3.0, true), make_trace(2, 9, 3.0, true)};
  const auto m = compute_metrics(tr, {false, 100, 0});
  EXPECT_EQ(m.success_rate, 0.0);
  EXPECT_EQ(m.success_ci, (Interval{0.0, 0.0}));
  EXPECT_FALSE(m.mean_successful_time);
  EXPECT_FALSE(m.successful_time_ci);
  const auto line = split_lines(metrics_csv({{"x", m, {}}}))[1];
  EXPECT_NE(line.find(",,,"), std::string::npos);  // blank time fields
}

TEST(Metrics, GoalRequirementChangesSuccess) {
  auto a = make_trace(1, 10, 3.0, false);
  EXPECT_TRUE(is_success(a, false));
  EXPECT_FALSE(is_success(a, true));
  a.goal_reached = true;
  EXPECT_TRUE(is_success(a, true));
}

TEST(Metrics, OrderIndependentAndReproducible) {
  std::vector<EpisodeTrace> tr;
  for (int i = 0; i < 12; ++i) tr.push_back(make_trace(100 + i, 10 + i, 1.0 + i, i % 3 == 0));
  const auto m1 = compute_metrics(tr, {false, 500, 7});
  std::reverse(tr.begin(), tr.end());
  EXPECT_EQ(compute_metrics(tr, {false, 500, 7}), m1);
  EXPECT_NE(compute_metrics(tr, {false, 500, 8}).distance_ci, m1.distance_ci);
}

TEST(Bootstrap, ConstantSampleAndCoverage) {
  EXPECT_EQ(bootstrap_mean_ci({2.0, 2.0, 2.0}, 100, 1), (Interval{2.0, 2.0}));
  std::vector<double> xs;
  nn::Rng rng(2);
  for (int i = 0; i < 400; ++i) xs.push_back(rng.normal());
  const auto ci = bootstrap_mean_ci(xs, 4000, 3);
  // normal-theory half width 1.96 / sqrt(400) ~ 0.098
  EXPECT_NEAR(ci.hi - ci.lo, 2 * 1.96 / 20.0, 0.03);
  EXPECT_THROW(bootstrap_mean_ci({}, 10, 1), ContractError);
}

TEST(StopEvents, RunsAreClassified) {
  EpisodeTrace tr;
  tr.seed = 5;
  tr.start_v = 1.0;
  auto push = [&](double v, int n) {
    for (int i = 0; i < n; ++i) {
      planner::StepTrace st;
      st.v = v;
      tr.steps.push_back(st);
    }
  };
  push(1.0, 3);
  push(0.0, 5);   // brief stop: v index 4..8
  push(2.0, 2);
  push(0.05, 30); // stall
  push(1.0, 1);
  push(0.0, 4);   // undecided at the end
  const auto ev = stop_events(tr);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].start, 4);
  EXPECT_FALSE(ev[0].stalled);
  EXPECT_EQ(ev[1].start, 11);
  EXPECT_TRUE(ev[1].stalled);
}

TEST(Suite, NoopOnAnEmptyRoadAlwaysSucceeds) {
  sim::ScenarioConfig c;
  c.agent_count = 0;
  c.horizon_steps = 30;
  const auto rows = run_suite({"noop"}, {}, {}, c, episode_seeds(1, 10), 1, {false, 100, 0});
  EXPECT_EQ(rows[0].metrics.success_rate, 1.0);
  EXPECT_EQ(rows[0].metrics.episodes, 10);
}

TEST(Suite, ModesArePairedOnIdenticalScenarios) {
  const auto m = fixtures::tiny_models(2, 2, dynamics::HeadMode::stochastic, 3, 0.3);
  ModelSet ms;
  ms.stochastic = m.dynamics;
  ms.bc = m.bc;
  ms.value = m.value;
  sim::ScenarioConfig c;
  c.horizon_steps = 6;
  planner::PlannerConfig pc;
  pc.N = 4;
  pc.K = 2;
  pc.H = 2;
  pc.n_c = 2;
  const auto seeds = episode_seeds(4, 3);
  const auto rows = run_suite({"noop", "bc", "umbrella", "umbrella-p"}, ms, pc, c, seeds, 2, {false, 50, 0});
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t i = 0; i < seeds.size(); ++i)
    for (const auto& r : rows) {
      EXPECT_EQ(r.traces[i].initial_hash, planner::state_hash(sim::env_reset(c, seeds[i])));
      EXPECT_EQ(r.traces[i].mode, r.mode);
    }
  // thread count does not change results
  const auto one = run_suite({"umbrella"}, ms, pc, c, seeds, 1, {false, 50, 0});
  EXPECT_EQ(one[0].metrics, rows[2].metrics);
  EXPECT_THROW(run_suite({"mbop"}, ms, pc, c, seeds), ContractError);
  EXPECT_THROW(run_suite({"fast"}, ms, pc, c, seeds), ConfigError);
}

TEST(Sweep, FailingPointsBecomeGaps) {
  const auto m = fixtures::tiny_models(2, 2, dynamics::HeadMode::stochastic, 4, 0.3);
  ModelSet ms;
  ms.stochastic = m.dynamics;
  ms.bc = m.bc;
  ms.value = m.value;
  sim::ScenarioConfig c;
  c.horizon_steps = 4;
  SweepSpec spec;
  spec.base.N = 4;
  spec.base.K = 2;
  spec.base.H = 2;
  spec.base.n_c = 2;
  spec.parameter = "N";
  spec.values = {4, 5, 6};  // 5 is not divisible by K
  spec.episodes = 2;
  std::vector<std::string> warnings;
  const Capture cap(warnings);
  const auto pts = run_sweep(spec, ms, c, 1, {false, 50, 0});
  EXPECT_EQ(warnings.size(), 1u);
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_TRUE(pts[0].metrics);
  EXPECT_FALSE(pts[1].metrics);
  EXPECT_NE(pts[1].error.find("config"), std::string::npos);
  EXPECT_TRUE(pts[2].metrics);
  const auto lines = split_lines(sweep_csv("N", pts));
  ASSERT_EQ(lines.size(), 4u);
  for (const auto& l : lines) EXPECT_EQ(count_fields(l), count_fields(lines[0]));
}

TEST(Sweep, SinglePointEqualsTheSuite) {
  const auto m = fixtures::tiny_models(2, 2, dynamics::HeadMode::stochastic, 5, 0.3);
  ModelSet ms;
  ms.stochastic = m.dynamics;
  ms.bc = m.bc;
  ms.value = m.value;
  sim::ScenarioConfig c;
  c.horizon_steps = 5;
  SweepSpec spec;
  spec.base.N = 4;
  spec.base.K = 2;
  spec.base.H = 2;
  spec.base.n_c = 2;
  spec.parameter = "beta";
  spec.values = {0.25};
  spec.episodes = 3;
  spec.seed = 9;
  const MetricsOptions mo{false, 50, 0};
  const auto pts = run_sweep(spec, ms, c, 1, mo);
  auto pc = spec.base;
  pc.beta = 0.25;
  const auto rows = run_suite({"umbrella"}, ms, pc, c, episode_seeds(9, 3), 1, mo);
  ASSERT_TRUE(pts[0].metrics);
  EXPECT_EQ(*pts[0].metrics, rows[0].metrics);
}

TEST(Sweep, ParameterValidation) {
  SweepSpec s;
  s.values = {1};
  s.parameter = "gamma";
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_EQ(with_parameter({}, "H", 7.0).H, 7);
  EXPECT_EQ(with_parameter({}, "kappa", 0.3).kappa, 0.3);
}

TEST(Bench, RowsAndSkips) {
  const auto m = fixtures::tiny_models(2, 2, dynamics::HeadMode::stochastic, 6, 0.3);
  ModelSet ms;
  ms.stochastic = m.dynamics;
  ms.bc = m.bc;
  ms.value = m.value;
  BenchSpec spec;
  spec.N_grid = {2, 3};
  spec.K_grid = {1, 2, 3};
  spec.H = 2;
  spec.repeats = 20;
  spec.warmup = 1;
  planner::PlannerConfig pc;
  pc.n_c = 2;
  std::vector<std::string> warnings;
  const Capture cap(warnings);
  const auto rows = runtime_benchmark(spec, ms, pc, {});
  EXPECT_EQ(warnings.size(), 2u);  // K=2 with N=3, and K=3
  ASSERT_EQ(rows.size(), 3u);  // (1,2) (1,3) (2,2)
  for (const auto& r : rows) {
    EXPECT_EQ(r.calls, 20);
    EXPECT_LE(r.min_ms, r.median_ms);
    EXPECT_LE(r.median_ms, r.max_ms);
  }
  EXPECT_EQ(split_lines(bench_csv(rows)).size(), 4u);
  spec.repeats = 5;
  EXPECT_THROW(runtime_benchmark(spec, ms, pc, {}), ConfigError);
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
}

TEST(Report, MetricsCsvShape) {
  std::vector<EpisodeTrace> tr{make_trace(1, 10, 2.0, false)};
  const auto m = compute_metrics(tr, {false, 20, 0});
  const auto lines = split_lines(metrics_csv({{"noop", m, tr}, {"bc", m, tr}}));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0].rfind("mode,episodes,success_rate", 0), 0u);
  for (const auto& l : lines) EXPECT_EQ(count_fields(l), 17);
  EXPECT_EQ(lines[1].rfind("noop,1,1,", 0), 0u);
}

TEST(Report, TraceJsonRoundTrip) {
  auto tr = make_trace(42, 3, 2.0, true);
  tr.mode = "umbrella";
  planner::PlanDiagnostics d;
  d.planned = true;
  d.k_star = 1;
  d.trajectory = Eigen::MatrixXd::Ones(2, 2);
  tr.steps[0].plan = d;
  const auto lines = split_lines(traces_jsonl({tr, tr}));
  ASSERT_EQ(lines.size(), 2u);
  const auto j = nlohmann::json::parse(lines[0]);
  EXPECT_EQ(j["seed"], 42);
  EXPECT_EQ(j["collision"], true);
  EXPECT_EQ(j["steps"].size(), 3u);
  EXPECT_EQ(j["steps"][0]["plan"]["k_star"], 1);
  EXPECT_EQ(j["steps"][0]["plan"]["T"].size(), 2u);
  EXPECT_FALSE(j["steps"][1].contains("plan"));
}

TEST(Report, SvgChartsAreWellFormed) {
  std::vector<EpisodeTrace> tr{make_trace(1, 10, 2.0, false), make_trace(2, 10, 2.0, true)};
  const auto m = compute_metrics(tr, {false, 20, 0});
  const auto s = suite_svg({{"a<b", m, {}}});
  EXPECT_EQ(s.rfind("<svg", 0), 0u);
  EXPECT_NE(s.find("</svg>"), std::string::npos);
  EXPECT_NE(s.find("a&lt;b"), std::string::npos);
  std::vector<SweepPoint> pts{{0.1, m, ""}, {0.2, std::nullopt, "x"}};
  EXPECT_NE(sweep_svg("beta", pts).find("</svg>"), std::string::npos);
  EXPECT_NE(bench_svg({{1, 10, 2, 20, 1.0, 0.5, 2.0}}).find("</svg>"), std::string::npos);
}

TEST(RunConfig, ParsesGroupsAndRejectsUnknownKeys) {
  std::istringstream in(
      "agent_count = 3\n"
      "gen.episodes = 12\n"
      "gen.mix = 1, 0, 0\n"
      "train.K = 3\n"
      "train.batch = 8\n"
      "planner.N = 30\n"
      "planner.beta = 0.2\n"
      "sweep.values = 0.1, 0.2\n"
      "bench.N = 5,10\n");
  const auto c = parse_run_config(in);
  EXPECT_EQ(c.scenario.agent_count, 3);
  EXPECT_EQ(c.dataset_episodes, 12);
  EXPECT_EQ(c.training.K, 3);
  EXPECT_EQ(c.training.dynamics.batch, 8);
  EXPECT_EQ(c.planner.N, 30);
  EXPECT_EQ(c.planner.beta, 0.2);
  EXPECT_EQ(c.sweep_values, (std::vector<double>{0.1, 0.2}));
  EXPECT_EQ(c.bench.N_grid, (std::vector<int>{5, 10}));
  std::istringstream unknown("planner.speed = 3\n");
  EXPECT_THROW(parse_run_config(unknown), ConfigError);
  std::istringstream bad("planner.N = many\n");
  EXPECT_THROW(parse_run_config(bad), ParseError);
  std::istringstream bad_mix("gen.mix = 1, 2\n");
  EXPECT_THROW(parse_run_config(bad_mix), ParseError);
  std::istringstream bad_bench("bench.repeats = 3\n");
  EXPECT_THROW(parse_run_config(bad_bench), ConfigError);
}

TEST(Pipeline, PlannerTakesKAndHistoryFromCheckpoints) {
  const auto m = fixtures::tiny_models(3, 4, dynamics::HeadMode::stochastic, 7);
  ModelSet ms;
  ms.stochastic = m.dynamics;
  planner::PlannerConfig base;
  const auto pc = planner_for(base, ms);
  EXPECT_EQ(pc.K, 3);
  EXPECT_EQ(pc.n_c, 4);
}
