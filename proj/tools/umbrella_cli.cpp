#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "umbrella/eval/report.hpp"
#include "umbrella/pipeline.hpp"

namespace fs = std::filesystem;
using namespace umbrella;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";
  int threads = 1;
};

RunConfig load(const Globals& g) {
  RunConfig c = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (g.threads < 1) throw ConfigError("--threads must be >= 1");
  c.generation.threads = g.threads;
  return c;
}

fs::path out_dir(const Globals& g) {
  fs::path p(g.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw StateError("cannot create output directory '" + g.out + "': " + ec.message());
  return p;
}

std::vector<data::EpisodeRecord> dataset_from(const std::string& path) {
  if (path.empty()) throw ConfigError("--dataset is required");
  return data::load_dataset(path);
}

eval::ModelSet load_models(const fs::path& dir) {
  eval::ModelSet ms;
  auto opt = [&](const char* name) -> std::optional<nlohmann::json> {
    const auto p = dir / name;
    if (!fs::exists(p)) return std::nullopt;
    return nn::read_json_file(p.string());
  };
  if (auto j = opt("dynamics.json")) ms.stochastic = dynamics::dynamics_from_json(*j);
  if (auto j = opt("dynamics_deterministic.json")) ms.deterministic = dynamics::dynamics_from_json(*j);
  if (auto j = opt("bc.json")) ms.bc = policy::bc_from_json(*j);
  if (auto j = opt("value.json")) ms.value = policy::value_from_json(*j);
  return ms;
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

int cmd_gen(const Globals& g, int episodes) {
  auto c = load(g);
  if (episodes > 0) c.dataset_episodes = episodes;
  data::GenerationStats st;
  const auto eps = data::generate_dataset(c.scenario, static_cast<std::size_t>(c.dataset_episodes), c.generation,
                                          g.seed, &st);
  const auto path = out_dir(g) / "dataset.jsonl";
  data::save_dataset(path.string(), eps);
  log_line("wrote " + path.string() + " (" + std::to_string(eps.size()) + " episodes, " +
           std::to_string(st.rejected) + " rejected)");
  return 0;
}

int cmd_train_dynamics(const Globals& g, const std::string& dataset, int steps) {
  auto c = load(g);
  if (steps >= 0) c.training.dynamics.deterministic_steps = c.training.dynamics.stochastic_steps = steps;
  const auto prep = prepare(dataset_from(dataset), c.training);
  auto trained = train_dynamics_models(prep, c.training, g.seed);
  const auto dir = out_dir(g);
  nn::write_json_file((dir / "dynamics.json").string(), dynamics::dynamics_to_json(trained.stochastic));
  nn::write_json_file((dir / "dynamics_deterministic.json").string(),
                      dynamics::dynamics_to_json(trained.deterministic));
  eval::write_text_file((dir / "loss_curves.csv").string(), dynamics::loss_curves_csv(trained.curves));
  log_line("wrote dynamics checkpoints to " + dir.string());
  return 0;
}

int cmd_train_policy(const Globals& g, const std::string& dataset, int steps, bool value) {
  auto c = load(g);
  if (steps >= 0) (value ? c.training.value_steps : c.training.bc_steps) = steps;
  const auto prep = prepare(dataset_from(dataset), c.training);
  const auto dir = out_dir(g);
  if (value) {
    nn::write_json_file((dir / "value.json").string(),
                        policy::ensemble_to_json(train_value_model(prep, c.training, g.seed)));
  } else {
    nn::write_json_file((dir / "bc.json").string(), policy::ensemble_to_json(train_bc_model(prep, c.training, g.seed)));
  }
  log_line(std::string("wrote ") + (value ? "value" : "bc") + " checkpoint to " + dir.string());
  return 0;
}

std::vector<std::string> split_modes(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const auto& r : raw) {
    std::stringstream ss(r);
    std::string m;
    while (std::getline(ss, m, ','))
      if (!m.empty()) out.push_back(m);
  }
  for (const auto& m : out)
    if (std::find(eval::known_modes().begin(), eval::known_modes().end(), m) == eval::known_modes().end())
      throw ConfigError("unknown mode '" + m + "'");
  return out;
}

int cmd_evaluate(const Globals& g, const std::vector<std::string>& modes_raw, const std::string& models,
                 int episodes) {
  auto c = load(g);
  if (episodes > 0) c.eval_episodes = episodes;
  const auto modes = split_modes(modes_raw);
  const auto ms = load_models(models.empty() ? fs::path(g.out) : fs::path(models));
  const auto pc = planner_for(c.planner, ms);
  auto mopt = c.metrics;
  mopt.seed = g.seed;
  const auto seeds = eval::episode_seeds(g.seed, c.eval_episodes);
  const auto rows = eval::run_suite(modes, ms, pc, c.scenario, seeds, g.threads, mopt);
  const auto dir = out_dir(g);
  eval::write_text_file((dir / "metrics.csv").string(), eval::metrics_csv(rows));
  std::string traces;
  for (const auto& r : rows) traces += eval::traces_jsonl(r.traces);
  eval::write_text_file((dir / "traces.jsonl").string(), traces);
  eval::write_text_file((dir / "metrics.svg").string(), eval::suite_svg(rows));
  for (const auto& r : rows)
    log_line(r.mode + ": SR " + eval::fmt(r.metrics.success_rate) + " [" + eval::fmt(r.metrics.success_ci.lo) + ", " +
             eval::fmt(r.metrics.success_ci.hi) + "] MD " + eval::fmt(r.metrics.mean_distance));
  return 0;
}

int cmd_sweep(const Globals& g, const std::string& mode, const std::string& models, const std::string& parameter,
              const std::vector<double>& values, int episodes) {
  auto c = load(g);
  const auto ms = load_models(models.empty() ? fs::path(g.out) : fs::path(models));
  eval::SweepSpec spec;
  spec.base = planner_for(c.planner, ms);
  spec.base.mode = planner::planner_mode_from_string(mode);
  spec.parameter = parameter.empty() ? c.sweep_parameter : parameter;
  spec.values = values.empty() ? c.sweep_values : values;
  spec.episodes = episodes > 0 ? episodes : c.sweep_episodes;
  spec.seed = g.seed;
  auto mopt = c.metrics;
  mopt.seed = g.seed;
  const auto pts = eval::run_sweep(spec, ms, c.scenario, g.threads, mopt);
  const auto dir = out_dir(g);
  eval::write_text_file((dir / "sweep.csv").string(), eval::sweep_csv(spec.parameter, pts));
  eval::write_text_file((dir / "sweep.svg").string(), eval::sweep_svg(spec.parameter, pts));
  for (const auto& p : pts)
    log_line(spec.parameter + "=" + eval::fmt(p.value) + ": " +
             (p.metrics ? "SR " + eval::fmt(p.metrics->success_rate) : "failed (" + p.error + ")"));
  return 0;
}

int cmd_bench(const Globals& g, const std::string& models, const std::string& mode) {
  auto c = load(g);
  const auto ms = load_models(models.empty() ? fs::path(g.out) : fs::path(models));
  auto spec = c.bench;
  spec.seed = g.seed;
  spec.mode = planner::planner_mode_from_string(mode);
  const auto rows = eval::runtime_benchmark(spec, ms, planner_for(c.planner, ms), c.scenario);
  const auto dir = out_dir(g);
  eval::write_text_file((dir / "bench.csv").string(), eval::bench_csv(rows));
  eval::write_text_file((dir / "bench.svg").string(), eval::bench_svg(rows));
  for (const auto& r : rows)
    log_line("K=" + std::to_string(r.K) + " N=" + std::to_string(r.N) + ": median " + eval::fmt(r.median_ms) + " ms");
  return 0;
}

void error_line(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UMBRELLA offline model-based planning toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "key = value run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);

  int episodes = 0;
  std::string dataset, models;
  int steps = -1;

  auto* gen = app.add_subcommand("gen-data", "generate an offline dataset (writes dataset.jsonl)");
  gen->add_option("--episodes", episodes, "episode count");

  auto* tdyn = app.add_subcommand("train-dynamics", "train the stochastic ensemble and the deterministic baseline");
  tdyn->add_option("--dataset", dataset, "dataset JSONL")->required();
  tdyn->add_option("--steps", steps, "steps per training phase");

  auto* tbc = app.add_subcommand("train-bc", "train the behavior-cloning ensemble");
  tbc->add_option("--dataset", dataset, "dataset JSONL")->required();
  tbc->add_option("--steps", steps, "training steps");

  auto* tval = app.add_subcommand("train-value", "train the value ensemble");
  tval->add_option("--dataset", dataset, "dataset JSONL")->required();
  tval->add_option("--steps", steps, "training steps");

  std::vector<std::string> modes{"umbrella"};
  auto* ev = app.add_subcommand("evaluate", "closed-loop evaluation (metrics.csv, traces.jsonl, metrics.svg)");
  ev->add_option("--mode", modes, "umbrella, umbrella-p, mbop, bc, noop (repeatable or comma separated)");
  ev->add_option("--models", models, "checkpoint directory (default: --out)");
  ev->add_option("--episodes", episodes, "episode count");

  std::string sweep_mode = "umbrella", parameter;
  std::vector<double> values;
  auto* sw = app.add_subcommand("sweep", "one-parameter sensitivity sweep (sweep.csv, sweep.svg)");
  sw->add_option("--mode", sweep_mode, "planner mode");
  sw->add_option("--models", models, "checkpoint directory (default: --out)");
  sw->add_option("--parameter", parameter, "beta, kappa, sigma2, N or H");
  sw->add_option("--values", values, "values to try")->delimiter(',');
  sw->add_option("--episodes", episodes, "episodes per point");

  std::string bench_mode = "umbrella";
  auto* bn = app.add_subcommand("bench", "plan() wall-clock over the N x K grid (bench.csv, bench.svg)");
  bn->add_option("--models", models, "checkpoint directory (default: --out)");
  bn->add_option("--mode", bench_mode, "planner mode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_line("usage", e.what());
    return 2;
  }

  try {
    if (*gen) return cmd_gen(g, episodes);
    if (*tdyn) return cmd_train_dynamics(g, dataset, steps);
    if (*tbc) return cmd_train_policy(g, dataset, steps, false);
    if (*tval) return cmd_train_policy(g, dataset, steps, true);
    if (*ev) return cmd_evaluate(g, modes, models, episodes);
    if (*sw) return cmd_sweep(g, sweep_mode, models, parameter, values, episodes);
    if (*bn) return cmd_bench(g, models, bench_mode);
  } catch (const Error& e) {
    error_line(e.kind(), e.what());
    return 3;
  } catch (const std::exception& e) {
    error_line("internal", e.what());
    return 4;
  }
  return 0;
}
