#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ma2c/config.hpp"
#include "ma2c/error.hpp"
#include "ma2c/harness.hpp"
#include "ma2c/rl/agents.hpp"
#include "ma2c/scenario.hpp"
#include "ma2c/traffic_sim.hpp"

namespace fs = std::filesystem;
using namespace ma2c;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<std::uint64_t> steps;
};

void add_common(CLI::App *cmd, Common &c) {
  cmd->add_option("--config", c.config, "Run configuration file (JSON)");
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--out", c.out, "Output root directory (MA2C_OUT overrides)");
  cmd->add_option("--steps", c.steps, "Total training steps");
}

RunConfig resolve(const Common &c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.steps) cfg.total_steps = *c.steps;
  cfg.validate();
  return cfg;
}

fs::path out_root(const Common &c) {
  if (const char *env = std::getenv("MA2C_OUT"); env && *env) return env;
  return c.out;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Multi-agent actor-critic traffic signal control"};
  app.require_subcommand(1);
  Common common;

  auto *train = app.add_subcommand("train", "Train a controller");
  add_common(train, common);
  std::string agent, run_id, resume;
  std::optional<std::uint64_t> until;
  train->add_option("--agent", agent, "ma2c | ia2c | iql-lr | iql-dnn | greedy | random | fixed-time");
  train->add_option("--run-id", run_id, "Run directory name under the output root");
  train->add_option("--until", until, "Stop at this global step (checkpoint for later resume)");
  train->add_option("--resume", resume, "Checkpoint to continue from");

  auto *evaluate = app.add_subcommand("evaluate", "Evaluate a trained checkpoint");
  add_common(evaluate, common);
  std::string checkpoint, eval_dir;
  std::optional<std::size_t> episodes;
  bool sample_eval = false;
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  evaluate->add_option("--episodes", episodes, "Number of evaluation episodes");
  evaluate->add_flag("--sample-eval", sample_eval, "Sample actions from pi instead of argmax");
  evaluate->add_option("--name", eval_dir, "Result directory name under the output root");

  auto *baseline = app.add_subcommand("baseline", "Evaluate a non-learning controller");
  add_common(baseline, common);
  std::vector<std::string> kinds{"greedy"};
  baseline->add_option("--kind", kinds, "greedy | random | fixed-time (repeatable)");
  baseline->add_option("--episodes", episodes, "Number of evaluation episodes");
  baseline->add_option("--name", eval_dir, "Result directory name under the output root");

  auto *mfd = app.add_subcommand("mfd", "Macroscopic fundamental diagram from episode CSVs");
  add_common(mfd, common);
  std::vector<std::string> inputs;
  double window = 300.0;
  std::string mfd_out;
  mfd->add_option("inputs", inputs, "Episode CSV files or directories")->required();
  mfd->add_option("--window", window, "Aggregation window (s)");
  mfd->add_option("--output", mfd_out, "Output CSV (default <out>/mfd.csv)");

  auto *gridgen = app.add_subcommand("gridgen", "Write a synthetic grid scenario");
  add_common(gridgen, common);
  std::size_t grid_n = 5;
  std::string grid_out;
  gridgen->add_option("--n", grid_n, "Grid size (n x n intersections)");
  gridgen->add_option("--output", grid_out, "Scenario file (default <out>/grid<n>.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) {
      RunConfig cfg = resolve(common);
      if (!agent.empty()) cfg.agent = parse_agent_kind(agent);
      harness::TrainOptions opt;
      opt.out_root = out_root(common);
      opt.run_id = run_id;
      opt.until = until;
      if (!resume.empty()) opt.resume = resume;
      const fs::path dir = harness::run_training(cfg, opt);
      std::cout << "training output: " << dir.string() << "\n";
    } else if (*evaluate) {
      const auto doc = harness::read_checkpoint(checkpoint);
      RunConfig cfg = common.config.empty() ? RunConfig::from_json(doc.at("config")) : resolve(common);
      if (common.config.empty()) {
        if (common.seed) cfg.seed = *common.seed;
        if (common.steps) cfg.total_steps = *common.steps;
      }
      if (episodes) cfg.eval.episodes = *episodes;
      if (sample_eval) cfg.eval.sample = true;
      const auto result = harness::evaluate_checkpoint(cfg, doc);
      const fs::path dir =
          out_root(common) / (eval_dir.empty() ? "eval-" + std::string(agent_kind_name(cfg.agent)) : eval_dir);
      harness::write_evaluation(dir, {result});
      harness::print_table(std::cout, {result});
    } else if (*baseline) {
      RunConfig cfg = resolve(common);
      if (episodes) cfg.eval.episodes = *episodes;
      const auto scenario = harness::make_scenario(cfg);
      sim::TrafficSim env(scenario, {cfg.delta_t, cfg.yellow_time, cfg.reward_coef});
      rl::Encoder encoder(env, cfg);
      std::vector<harness::EvaluationResult> results;
      for (const std::string &k : kinds) {
        const AgentKind kind = parse_agent_kind(k);
        std::unique_ptr<rl::Controller> c;
        if (kind == AgentKind::GREEDY)
          c = std::make_unique<rl::GreedyController>(encoder);
        else if (kind == AgentKind::RANDOM)
          c = std::make_unique<rl::RandomController>(encoder, derive_seed(cfg.eval.seed_base, 0));
        else if (kind == AgentKind::FIXED_TIME)
          c = std::make_unique<rl::FixedTimeController>(encoder, rl::kFixedTimeHold);
        else
          throw ConfigError("baseline kind must be greedy, random or fixed-time");
        results.push_back(harness::evaluate(cfg, scenario, *c, std::string(agent_kind_name(kind))));
      }
      const fs::path dir = out_root(common) / (eval_dir.empty() ? "baseline" : eval_dir);
      harness::write_evaluation(dir, results);
      harness::print_table(std::cout, results);
    } else if (*mfd) {
      const RunConfig cfg = resolve(common);
      std::vector<fs::path> files;
      for (const std::string &in : inputs) {
        if (fs::is_directory(in)) {
          for (const auto &e : fs::directory_iterator(in))
            if (e.path().extension() == ".csv") files.push_back(e.path());
        } else {
          files.emplace_back(in);
        }
      }
      std::sort(files.begin(), files.end());
      std::vector<harness::EpisodeLog> logs;
      for (const auto &f : files) logs.push_back(harness::read_episode_csv(f, cfg.delta_t));
      const fs::path target = mfd_out.empty() ? out_root(common) / "mfd.csv" : fs::path(mfd_out);
      if (target.has_parent_path()) fs::create_directories(target.parent_path());
      std::ofstream(target, std::ios::binary) << harness::mfd_csv(logs, window);
      std::cout << "mfd: " << target.string() << "\n";
    } else if (*gridgen) {
      RunConfig cfg = resolve(common);
      sim::GridParams grid = cfg.grid;
      grid.n = grid_n;
      grid.duration = static_cast<double>(cfg.episode_length) * cfg.delta_t;
      const auto scenario = sim::build_grid_scenario(grid);
      const fs::path target =
          grid_out.empty() ? out_root(common) / ("grid" + std::to_string(grid_n) + ".json") : fs::path(grid_out);
      if (target.has_parent_path()) fs::create_directories(target.parent_path());
      sim::save_scenario(scenario, target);
      std::cout << "scenario with " << scenario.intersections.size() << " agents: " << target.string() << "\n";
    }
  } catch (const ConfigError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError &e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
