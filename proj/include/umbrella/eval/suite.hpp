#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "umbrella/eval/metrics.hpp"

namespace umbrella::eval {

using ControllerFactory = std::function<std::unique_ptr<planner::Controller>()>;

/// Loaded checkpoints; any member may be missing.
struct ModelSet {
  std::optional<dynamics::DynamicsEnsemble> stochastic;
  std::optional<dynamics::DynamicsEnsemble> deterministic;
  std::optional<policy::BCPolicyEnsemble> bc;
  std::optional<policy::ValueEnsemble> value;
};

inline const std::vector<std::string>& known_modes() {
  static const std::vector<std::string> m{"umbrella", "umbrella-p", "mbop", "bc", "noop"};
  return m;
}

/// Controller factory for a mode name. Missing checkpoints raise an error
/// naming the mode. The planner mode in `base` is overridden by `mode`.
inline ControllerFactory controller_factory(const std::string& mode, const ModelSet& ms,
                                            planner::PlannerConfig base) {
  auto need = [&](bool ok, const char* what) {
    if (!ok) throw ContractError("mode '" + mode + "' needs a " + what + " checkpoint");
  };
  if (mode == "noop") return [] { return std::make_unique<planner::NoopController>(); };
  if (mode == "bc") {
    need(ms.bc.has_value(), "BC policy");
    const auto* bc = &*ms.bc;
    return [bc] { return std::make_unique<planner::BCController>(*bc); };
  }
  const auto pm = planner::planner_mode_from_string(mode);
  base.mode = pm;
  need(ms.bc.has_value(), "BC policy");
  need(ms.value.has_value(), "value function");
  const dynamics::DynamicsEnsemble* dyn = nullptr;
  if (pm == planner::PlannerMode::mbop) {
    need(ms.deterministic.has_value(), "deterministic dynamics");
    dyn = &*ms.deterministic;
  } else {
    need(ms.stochastic.has_value(), "stochastic dynamics");
    dyn = &*ms.stochastic;
  }
  planner::Models models{dyn, &*ms.bc, &*ms.value};
  models.validate(base);
  return [models, base] { return std::make_unique<planner::PlannerController>(models, base); };
}

inline std::vector<std::uint64_t> episode_seeds(std::uint64_t seed, int count) {
  if (count < 1) throw ConfigError("episode count must be >= 1");
  std::vector<std::uint64_t> out;
  for (int i = 0; i < count; ++i) out.push_back(nn::derive_seed(seed, static_cast<std::uint64_t>(i)));
  return out;
}

/// Runs one episode per seed. Episodes are independent, so with `threads`
/// > 1 they run concurrently; results are stored by seed index.
inline std::vector<EpisodeTrace> run_episodes(const sim::ScenarioConfig& cfg, const ControllerFactory& make,
                                              const std::vector<std::uint64_t>& seeds, int threads = 1) {
  std::vector<EpisodeTrace> out(seeds.size());
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(seeds.size())));
  if (workers == 1) {
    auto ctl = make();
    for (std::size_t i = 0; i < seeds.size(); ++i) out[i] = planner::run_episode(cfg, *ctl, seeds[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      try {
        auto ctl = make();
        for (std::size_t i = next++; i < seeds.size(); i = next++) out[i] = planner::run_episode(cfg, *ctl, seeds[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(m);
        if (!failure) failure = std::current_exception();
        next = seeds.size();
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

struct SuiteRow {
  std::string mode;
  MetricsSummary metrics;
  std::vector<EpisodeTrace> traces;
};

/// Paired-seed comparison: every mode runs the same scenario sequence, which
/// is verified through the initial-state hashes.
inline std::vector<SuiteRow> run_suite(const std::vector<std::string>& modes, const ModelSet& ms,
                                       const planner::PlannerConfig& base, const sim::ScenarioConfig& cfg,
                                       const std::vector<std::uint64_t>& seeds, int threads = 1,
                                       MetricsOptions mopt = {}) {
  if (modes.empty()) throw ConfigError("run_suite needs at least one mode");
  mopt.success_requires_goal = mopt.success_requires_goal || cfg.success_requires_goal;
  std::vector<SuiteRow> rows;
  for (const auto& mode : modes) {
    SuiteRow r;
    r.mode = mode;
    r.traces = run_episodes(cfg, controller_factory(mode, ms, base), seeds, threads);
    for (auto& tr : r.traces) tr.mode = mode;
    r.metrics = compute_metrics(r.traces, mopt);
    rows.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < seeds.size(); ++i)
    for (const auto& r : rows)
      if (r.traces[i].initial_hash != rows.front().traces[i].initial_hash)
        throw StateError("paired evaluation broken: mode " + r.mode + " saw a different scenario for seed index " +
                         std::to_string(i));
  return rows;
}

// ------------------------------------------------------------------- sweeps

struct SweepSpec {
  planner::PlannerConfig base;
  std::string parameter = "beta";
  std::vector<double> values;
  int episodes = 50;
  std::uint64_t seed = 0;

  void validate() const {
    static const std::vector<std::string> ok{"beta", "kappa", "sigma2", "N", "H"};
    if (std::find(ok.begin(), ok.end(), parameter) == ok.end())
      throw ConfigError("sweep parameter must be one of beta, kappa, sigma2, N, H (got '" + parameter + "')");
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    if (episodes < 1) throw ConfigError("sweep needs at least one episode per point");
  }
};

inline planner::PlannerConfig with_parameter(planner::PlannerConfig c, const std::string& p, double v) {
  if (p == "beta") c.beta = v;
  else if (p == "kappa") c.kappa = v;
  else if (p == "sigma2") c.sigma2 = v;
  else if (p == "N") c.N = static_cast<int>(std::lround(v));
  else if (p == "H") c.H = static_cast<int>(std::lround(v));
  else throw ConfigError("unknown sweep parameter '" + p + "'");
  return c;
}

struct SweepPoint {
  double value = 0.0;
  std::optional<MetricsSummary> metrics;
  std::string error;  // nonempty when the point failed
};

/// One metrics summary per value; a failing point is recorded as a gap and
/// the sweep continues.
inline std::vector<SweepPoint> run_sweep(const SweepSpec& spec, const ModelSet& ms, const sim::ScenarioConfig& cfg,
                                         int threads = 1, MetricsOptions mopt = {}) {
  spec.validate();
  mopt.success_requires_goal = mopt.success_requires_goal || cfg.success_requires_goal;
  const auto seeds = episode_seeds(spec.seed, spec.episodes);
  std::vector<SweepPoint> out;
  for (double v : spec.values) {
    SweepPoint pt;
    pt.value = v;
    try {
      const auto pc = with_parameter(spec.base, spec.parameter, v);
      pc.validate();
      const auto traces = run_episodes(cfg, controller_factory(to_string(pc.mode), ms, pc), seeds, threads);
      pt.metrics = compute_metrics(traces, mopt);
    } catch (const Error& e) {
      pt.error = e.kind() + ": " + e.what();
      warn("sweep point " + spec.parameter + "=" + std::to_string(v) + " failed: " + pt.error);
    }
    out.push_back(std::move(pt));
  }
  return out;
}

// ---------------------------------------------------------------- benchmark

struct BenchSpec {
  std::vector<int> N_grid{10, 50, 100, 200, 300, 500};
  std::vector<int> K_grid{1, 2};
  int H = 30;
  int repeats = 21;
  int warmup = 3;
  std::uint64_t seed = 0;
  planner::PlannerMode mode = planner::PlannerMode::umbrella;

  void validate() const {
    if (N_grid.empty() || K_grid.empty()) throw ConfigError("bench grid is empty");
    for (int n : N_grid)
      if (n < 1) throw ConfigError("bench N values must be >= 1");
    if (repeats < 20) throw ConfigError("bench needs at least 20 timed calls per point");
    if (H < 1) throw ConfigError("bench H must be >= 1");
  }
};

struct BenchRow {
  int K = 0;
  int N = 0;
  int H = 0;
  int calls = 0;
  double median_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
};

template <class Ensemble>
Ensemble first_heads(const Ensemble& e, int K) {
  if (K < 1 || K > static_cast<int>(e.heads.size()))
    throw ConfigError("cannot take " + std::to_string(K) + " heads from an ensemble of " +
                      std::to_string(e.heads.size()));
  Ensemble out = e;
  out.heads.resize(K);
  out.seeds.resize(K);
  return out;
}

inline double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// Wall-clock per plan() call on a fixed input (median of `repeats` calls
/// after `warmup` untimed ones). K values larger than the loaded ensembles
/// and N not divisible by K are skipped.
inline std::vector<BenchRow> runtime_benchmark(const BenchSpec& spec, const ModelSet& ms,
                                               const planner::PlannerConfig& base, const sim::ScenarioConfig& cfg) {
  spec.validate();
  const bool mbop = spec.mode == planner::PlannerMode::mbop;
  const auto& dyn_full = mbop ? ms.deterministic : ms.stochastic;
  if (!dyn_full || !ms.bc || !ms.value) throw ContractError("bench needs dynamics, BC and value checkpoints");
  std::vector<BenchRow> rows;
  for (int K : spec.K_grid) {
    if (K > dyn_full->size() || K > ms.bc->size()) {
      warn("bench: skipping K=" + std::to_string(K) + " (ensemble has fewer heads)");
      continue;
    }
    const auto dyn = first_heads(*dyn_full, K);
    const auto bc = first_heads(*ms.bc, K);
    for (int N : spec.N_grid) {
      if (N % K != 0) {
        warn("bench: skipping N=" + std::to_string(N) + " (not divisible by K=" + std::to_string(K) + ")");
        continue;
      }
      planner::PlannerConfig pc = base;
      pc.K = K;
      pc.N = N;
      pc.H = spec.H;
      pc.mode = spec.mode;
      planner::Models models{&dyn, &bc, &*ms.value};
      const auto s0 = sim::env_reset(cfg, spec.seed);
      data::History hist(pc.n_c, sim::observe(s0, cfg));
      const auto in = planner::make_plan_input(dyn.stats, hist, Eigen::MatrixXd::Zero(data::kActionDim, pc.H));
      for (int w = 0; w < spec.warmup; ++w) planner::plan(in, models, pc, nn::derive_seed(spec.seed, w));
      std::vector<double> ms_times;
      for (int r = 0; r < spec.repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        planner::plan(in, models, pc, nn::derive_seed(spec.seed, 1000 + r));
        ms_times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
      }
      rows.push_back({K, N, spec.H, spec.repeats, median(ms_times),
                      *std::min_element(ms_times.begin(), ms_times.end()),
                      *std::max_element(ms_times.begin(), ms_times.end())});
    }
  }
  return rows;
}

}  // namespace umbrella::eval
