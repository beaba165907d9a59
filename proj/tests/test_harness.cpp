#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ma2c/error.hpp"
#include "ma2c/harness.hpp"
#include "support.hpp"

using namespace ma2c;
using namespace ma2c::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string &name) {
  const fs::path dir = fs::temp_directory_path() / ("ma2c_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

EpisodeLog constant_log(std::size_t steps, std::uint64_t accumulation, double flow) {
  EpisodeLog log;
  log.controller = "c";
  log.delta_t = 5;
  for (std::size_t t = 0; t < steps; ++t) {
    EpisodeRow r;
    r.step = t + 1;
    r.accumulation = accumulation;
    r.trip_completion_flow = flow;
    log.rows.push_back(r);
  }
  return log;
}

std::size_t count_lines(const std::string &text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

} // namespace

TEST_CASE("number formatting") {
  CHECK(format_number(0.0) == "0");
  CHECK(format_number(-0.0) == "0");
  CHECK(format_number(1.5) == "1.5");
  CHECK(format_number(-1730.25) == "-1730.25");
  CHECK(format_number(std::optional<double>{}) == "NA");
  const double x = 0.1 + 0.2;
  CHECK(std::stod(format_number(x)) == x);
}

TEST_CASE("training CSV rows") {
  rl::TrainingRow r;
  r.episode = 2;
  r.global_step = 240;
  r.avg_episode_reward = -3.5;
  r.reward_std = 1.25;
  r.episode_done = true;
  CHECK(training_csv_row(r) == "2,240,-3.5,NA,NA,NA,NA,1.25,1\n");
  CHECK(training_csv_header().rfind("episode,global_step,avg_episode_reward", 0) == 0);
}

TEST_CASE("MFD windows") {
  auto pts = emit_mfd(constant_log(720, 100, 0.5));
  REQUIRE(pts.size() == 12);
  for (std::size_t w = 0; w < pts.size(); ++w) {
    CHECK(pts[w].window == w);
    CHECK(pts[w].accumulation == 100.0);
    CHECK(pts[w].flow == 0.5);
    CHECK_FALSE(pts[w].partial);
  }
  for (const auto &p : emit_mfd(constant_log(720, 0, 0.0))) {
    CHECK(p.accumulation == 0.0);
    CHECK(p.flow == 0.0);
  }
  CHECK(emit_mfd(constant_log(130, 1, 0.0)).size() == 2); // trailing 10 steps dropped
  const auto short_ep = emit_mfd(constant_log(20, 7, 0.2));
  REQUIRE(short_ep.size() == 1);
  CHECK(short_ep[0].partial);
  CHECK(short_ep[0].accumulation == 7.0);
  CHECK(emit_mfd(constant_log(0, 1, 0.0)).empty());
  CHECK_THROWS_AS(emit_mfd(constant_log(10, 1, 0.0), 0.0), ConfigError);

  auto ramp = constant_log(120, 0, 0.0);
  for (std::size_t t = 0; t < 120; ++t) ramp.rows[t].accumulation = t;
  const auto rp = emit_mfd(ramp);
  CHECK(rp[0].accumulation == 29.5);
  CHECK(rp[1].accumulation == 89.5);
  const std::string csv = mfd_csv({ramp});
  CHECK(csv == "controller,seed,window,accumulation,flow,partial\nc,0,0,29.5,0,0\nc,0,1,89.5,0,0\n");
}

TEST_CASE("aggregation of episode metrics") {
  EvaluationResult res;
  for (int k = 0; k < 2; ++k) {
    EpisodeLog log = constant_log(3, 0, 0.0);
    log.rows[0].reward = k == 0 ? -2.0 : -4.0;
    log.rows[1].reward = -10.0;
    log.rows[2].reward = 0.0;
    log.rows[0].avg_queue = 1.0;
    log.rows[1].avg_queue = k == 0 ? 5.0 : 3.0;
    log.rows[2].avg_delay = 6.0;
    log.trip_delays = k == 0 ? std::vector<double>{1.0, 2.0} : std::vector<double>{9.0};
    res.episodes.push_back(log);
  }
  aggregate(res);
  CHECK(res.average.reward == doctest::Approx((-3.0 - 10.0 + 0.0) / 3.0));
  CHECK(res.peak.reward == -10.0);
  CHECK(res.average.avg_queue == doctest::Approx(5.0 / 3.0));
  CHECK(res.peak.avg_queue == 4.0);
  CHECK(res.average.avg_delay == 6.0); // only steps with a measurement count
  CHECK(res.average.trip_delay == 4.0);
  CHECK(res.peak.trip_delay == 9.0);
  CHECK_FALSE(res.average.avg_speed.has_value());
}

TEST_CASE("property: peaks bound averages on real episodes") {
  RunConfig c;
  c.grid.n = 3;
  c.episode_length = 120;
  c.eval.episodes = 3;
  const auto scenario = make_scenario(c);
  sim::TrafficSim env(scenario, {c.delta_t, c.yellow_time, c.reward_coef});
  rl::Encoder enc(env, c);
  for (std::uint64_t s = 0; s < 3; ++s) {
    rl::RandomController ctrl(enc, s);
    c.eval.seed_base = 100 * s;
    const auto r = evaluate(c, scenario, ctrl, "random");
    CHECK(r.peak.reward <= r.average.reward);
    CHECK(r.peak.avg_queue >= r.average.avg_queue);
    CHECK(r.peak.trip_completion_flow >= r.average.trip_completion_flow);
    if (r.average.avg_delay) CHECK(*r.peak.avg_delay >= *r.average.avg_delay);
    if (r.average.trip_delay) CHECK(*r.peak.trip_delay >= *r.average.trip_delay);
  }
}

TEST_CASE("episode CSVs are reproducible and parse back") {
  RunConfig c;
  c.grid.n = 3;
  c.episode_length = 100;
  const auto scenario = make_scenario(c);
  sim::TrafficSim env(scenario, {c.delta_t, c.yellow_time, c.reward_coef});
  rl::Encoder enc(env, c);
  rl::GreedyController greedy(enc);
  const auto a = run_episode(c, scenario, greedy, "greedy", 42);
  const auto b = run_episode(c, scenario, greedy, "greedy", 42);
  CHECK(episode_csv(a) == episode_csv(b));
  CHECK(count_lines(episode_csv(a)) == 101);

  const fs::path dir = scratch("episodes");
  std::ofstream(dir / "greedy-42.csv", std::ios::binary) << episode_csv(a);
  const auto back = read_episode_csv(dir / "greedy-42.csv", c.delta_t);
  REQUIRE(back.rows.size() == a.rows.size());
  for (std::size_t t = 0; t < a.rows.size(); ++t) {
    CHECK(back.rows[t].reward == a.rows[t].reward);
    CHECK(back.rows[t].accumulation == a.rows[t].accumulation);
    CHECK(back.rows[t].avg_delay == a.rows[t].avg_delay);
  }
  CHECK(mfd_csv({back}) == mfd_csv({a}));
  fs::remove_all(dir);
}

TEST_CASE("training writes a log, checkpoints and resumes") {
  const fs::path root = scratch("train");
  RunConfig c = testing::tiny_config(AgentKind::MA2C);
  c.total_steps = 0;
  TrainOptions opt;
  opt.out_root = root;
  opt.run_id = "empty";
  const fs::path empty = run_training(c, opt);
  CHECK(slurp(empty / "training.csv") == training_csv_header());
  CHECK(fs::exists(empty / "checkpoints" / "final.ckpt"));

  c.total_steps = 150;
  c.checkpoint_interval = 50;
  opt.run_id = "full";
  const fs::path full = run_training(c, opt);
  for (const char *f : {"step_50.ckpt", "step_100.ckpt", "step_150.ckpt", "final.ckpt"})
    CHECK(fs::exists(full / "checkpoints" / f));
  CHECK(RunConfig::from_json(nlohmann::json::parse(slurp(full / "config.json"))).digest() == c.digest());

  opt.run_id = "split";
  opt.until = 70;
  const fs::path split = run_training(c, opt);
  CHECK(fs::exists(split / "checkpoints" / "step_70.ckpt"));
  CHECK_FALSE(fs::exists(split / "checkpoints" / "final.ckpt"));
  // Rows past the checkpoint would be duplicated on resume; append garbage to prove they are dropped.
  std::ofstream(split / "training.csv", std::ios::app) << "9,999,0,0,0,0,0,0,0\n";
  opt.until.reset();
  opt.resume = split / "checkpoints" / "step_70.ckpt";
  run_training(c, opt);
  CHECK(slurp(split / "training.csv") == slurp(full / "training.csv"));
  CHECK(slurp(split / "checkpoints" / "final.ckpt") == slurp(full / "checkpoints" / "final.ckpt"));
  fs::remove_all(root);
}

TEST_CASE("checkpoint evaluation checks the configuration digest") {
  RunConfig c = testing::tiny_config(AgentKind::MA2C);
  c.eval.episodes = 2;
  rl::Trainer t(c, make_scenario(c));
  t.run_until(40);
  const auto doc = t.checkpoint();
  const auto a = evaluate_checkpoint(c, doc);
  const auto b = evaluate_checkpoint(c, doc);
  CHECK(eval_csv({a}) == eval_csv({b}));
  CHECK(a.episodes.size() == 2);

  RunConfig other = c;
  other.alpha = 0.5;
  try {
    evaluate_checkpoint(other, doc);
    FAIL("expected a digest mismatch");
  } catch (const ConfigError &e) {
    const std::string msg = e.what();
    CHECK(msg.find("digest") != std::string::npos);
    CHECK(msg.find("/alpha") != std::string::npos);
  }
  RunConfig eval_only = c;
  eval_only.eval.episodes = 1;
  CHECK(evaluate_checkpoint(eval_only, doc).episodes.size() == 1);
}

TEST_CASE("evaluation output files") {
  RunConfig c;
  c.grid.n = 2;
  c.episode_length = 30;
  c.eval.episodes = 2;
  const auto scenario = make_scenario(c);
  sim::TrafficSim env(scenario, {c.delta_t, c.yellow_time, c.reward_coef});
  rl::Encoder enc(env, c);
  rl::GreedyController g(enc);
  rl::FixedTimeController f(enc, rl::kFixedTimeHold);
  const std::vector<EvaluationResult> results{evaluate(c, scenario, g, "greedy"), evaluate(c, scenario, f, "fixed-time")};
  const fs::path dir = scratch("eval");
  write_evaluation(dir, results);
  CHECK(slurp(dir / "eval.csv") == eval_csv(results));
  CHECK(count_lines(eval_csv(results)) == 5);
  CHECK(fs::exists(dir / "episodes" / "greedy-10000.csv"));
  CHECK(fs::exists(dir / "episodes" / "fixed-time-10001.csv"));
  std::ostringstream table;
  print_table(table, results);
  CHECK(table.str().find("fixed-time") != std::string::npos);
  fs::remove_all(dir);
}
