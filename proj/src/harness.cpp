#include "ma2c/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "ma2c/error.hpp"
#include "ma2c/traffic_sim.hpp"

namespace ma2c::harness {

using nlohmann::json;

namespace {

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::vector<std::string> split(const std::string &line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::optional<double> parse_optional(const std::string &cell) {
  if (cell == "NA") return std::nullopt;
  return std::stod(cell);
}

} // namespace

std::shared_ptr<const sim::Scenario> make_scenario(const RunConfig &config) {
  if (!config.scenario.empty()) return std::make_shared<const sim::Scenario>(sim::load_scenario(config.scenario));
  sim::GridParams grid = config.grid;
  grid.duration = static_cast<double>(config.episode_length) * config.delta_t;
  return std::make_shared<const sim::Scenario>(sim::build_grid_scenario(grid));
}

std::string format_number(double value) {
  if (value == 0.0) return "0"; // also folds -0
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string format_number(const std::optional<double> &value) { return value ? format_number(*value) : "NA"; }

std::string training_csv_header() {
  return "episode,global_step,avg_episode_reward,policy_loss,value_loss,entropy,grad_norm,reward_std,episode_done\n";
}

std::string training_csv_row(const rl::TrainingRow &row) {
  std::ostringstream out;
  out << row.episode << ',' << row.global_step << ',' << format_number(row.avg_episode_reward) << ','
      << format_number(row.policy_loss) << ',' << format_number(row.value_loss) << ',' << format_number(row.entropy)
      << ',' << format_number(row.grad_norm) << ',' << format_number(row.reward_std) << ','
      << (row.episode_done ? 1 : 0) << '\n';
  return out.str();
}

json read_checkpoint(const fs::path &path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error &e) {
    throw ConfigError("checkpoint " + path.string() + ": " + e.what());
  }
}

void write_checkpoint(const json &doc, const fs::path &path) {
  const fs::path tmp = path.string() + ".tmp";
  write_text(tmp, doc.dump());
  fs::rename(tmp, path);
}

fs::path run_training(const RunConfig &config, const TrainOptions &options) {
  const std::string run_id = options.run_id.empty()
                                 ? std::string(agent_kind_name(config.agent)) + "-seed" + std::to_string(config.seed)
                                 : options.run_id;
  const fs::path dir = options.out_root / run_id;
  const fs::path ckpt_dir = dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  write_text(dir / "config.json", config.to_json().dump(2) + "\n");

  rl::Trainer trainer(config, make_scenario(config));
  std::string log = training_csv_header();
  if (options.resume) {
    trainer.restore(read_checkpoint(*options.resume));
    // Keep the rows written up to the checkpoint, drop anything later.
    const fs::path csv = dir / "training.csv";
    if (fs::exists(csv)) {
      std::istringstream in(read_text(csv));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        const auto cells = split(line, ',');
        if (cells.size() > 1 && std::stoull(cells[1]) <= trainer.global_step()) log += line + "\n";
      }
    }
  }
  std::ofstream out(dir / "training.csv", std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + (dir / "training.csv").string());
  out << log;
  out.flush();
  trainer.on_row = [&out](const rl::TrainingRow &row) { out << training_csv_row(row); };

  const std::uint64_t limit = std::min(config.total_steps, options.until.value_or(config.total_steps));
  const std::uint64_t interval = config.checkpoint_interval;
  try {
    while (trainer.global_step() < limit) {
      trainer.step();
      if (interval > 0 && trainer.global_step() % interval == 0)
        write_checkpoint(trainer.checkpoint(),
                         ckpt_dir / ("step_" + std::to_string(trainer.global_step()) + ".ckpt"));
    }
  } catch (const DivergenceError &) {
    out.flush();
    write_checkpoint(trainer.checkpoint(), ckpt_dir / "diverged.ckpt");
    throw;
  }
  out.flush();
  const std::string name = trainer.global_step() >= config.total_steps
                               ? "final.ckpt"
                               : "step_" + std::to_string(trainer.global_step()) + ".ckpt";
  write_checkpoint(trainer.checkpoint(), ckpt_dir / name);
  return dir;
}

std::string episode_csv_header() {
  return "step,avg_queue,avg_delay,avg_speed,completed,accumulation,reward,trip_completion_flow,trip_delay\n";
}

std::string episode_csv(const EpisodeLog &log) {
  std::ostringstream out;
  out << episode_csv_header();
  for (const EpisodeRow &r : log.rows)
    out << r.step << ',' << format_number(r.avg_queue) << ',' << format_number(r.avg_delay) << ','
        << format_number(r.avg_speed) << ',' << r.completed << ',' << r.accumulation << ',' << format_number(r.reward)
        << ',' << format_number(r.trip_completion_flow) << ',' << format_number(r.trip_delay) << '\n';
  return out.str();
}

EpisodeLog read_episode_csv(const fs::path &path, int delta_t) {
  EpisodeLog log;
  // Files are named <controller>-<seed>.csv by write_evaluation().
  log.controller = path.stem().string();
  if (const auto dash = log.controller.rfind('-'); dash != std::string::npos && dash + 1 < log.controller.size() &&
      std::all_of(log.controller.begin() + dash + 1, log.controller.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
    log.seed = std::stoull(log.controller.substr(dash + 1));
    log.controller.resize(dash);
  }
  log.delta_t = delta_t;
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  if (line + "\n" != episode_csv_header()) throw ConfigError(path.string() + " is not an episode CSV");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split(line, ',');
    if (c.size() != 9) throw ConfigError(path.string() + ": malformed row '" + line + "'");
    EpisodeRow r;
    r.step = std::stoull(c[0]);
    r.avg_queue = std::stod(c[1]);
    r.avg_delay = parse_optional(c[2]);
    r.avg_speed = parse_optional(c[3]);
    r.completed = std::stoull(c[4]);
    r.accumulation = std::stoull(c[5]);
    r.reward = std::stod(c[6]);
    r.trip_completion_flow = std::stod(c[7]);
    r.trip_delay = parse_optional(c[8]);
    log.rows.push_back(r);
  }
  return log;
}

EpisodeLog run_episode(const RunConfig &config, std::shared_ptr<const sim::Scenario> scenario,
                       rl::Controller &controller, const std::string &name, std::uint64_t seed) {
  sim::TrafficSim env(std::move(scenario), {config.delta_t, config.yellow_time, config.reward_coef});
  EpisodeLog log;
  log.controller = name;
  log.seed = seed;
  log.delta_t = config.delta_t;
  sim::Observation obs = env.reset(seed);
  controller.begin_episode();
  for (std::uint64_t t = 0; t < config.episode_length; ++t) {
    sim::StepResult res = env.step(controller.act(obs));
    obs = std::move(res.obs);
    EpisodeRow row;
    row.step = t + 1;
    row.avg_queue = res.metrics.avg_queue;
    row.avg_delay = res.metrics.avg_delay;
    row.avg_speed = res.metrics.avg_speed;
    row.completed = res.metrics.completed;
    row.accumulation = res.metrics.accumulation;
    for (double r : res.rewards) row.reward += r;
    row.trip_completion_flow = static_cast<double>(res.completed_in_step) / config.delta_t;
    if (!res.trip_delays_in_step.empty()) {
      double sum = 0.0;
      for (double d : res.trip_delays_in_step) sum += d;
      row.trip_delay = sum / static_cast<double>(res.trip_delays_in_step.size());
    }
    log.trip_delays.insert(log.trip_delays.end(), res.trip_delays_in_step.begin(), res.trip_delays_in_step.end());
    log.rows.push_back(row);
  }
  return log;
}

void aggregate(EvaluationResult &result) {
  struct Series {
    std::vector<double> sum;
    std::vector<std::size_t> count;
    void add(std::size_t t, const std::optional<double> &v) {
      if (sum.size() <= t) {
        sum.resize(t + 1, 0.0);
        count.resize(t + 1, 0);
      }
      if (v) {
        sum[t] += *v;
        ++count[t];
      }
    }
    // Temporal mean and extreme of the per-step episode means.
    std::pair<std::optional<double>, std::optional<double>> summarize(bool lowest) const {
      double total = 0.0;
      std::size_t n = 0;
      std::optional<double> extreme;
      for (std::size_t t = 0; t < sum.size(); ++t) {
        if (count[t] == 0) continue;
        const double m = sum[t] / static_cast<double>(count[t]);
        total += m;
        ++n;
        if (!extreme || (lowest ? m < *extreme : m > *extreme)) extreme = m;
      }
      if (n == 0) return {std::nullopt, std::nullopt};
      return {total / static_cast<double>(n), extreme};
    }
  };
  Series reward, queue, delay, speed, flow;
  std::vector<double> trips;
  for (const EpisodeLog &log : result.episodes) {
    for (std::size_t t = 0; t < log.rows.size(); ++t) {
      const EpisodeRow &r = log.rows[t];
      reward.add(t, r.reward);
      queue.add(t, r.avg_queue);
      delay.add(t, r.avg_delay);
      speed.add(t, r.avg_speed);
      flow.add(t, r.trip_completion_flow);
    }
    trips.insert(trips.end(), log.trip_delays.begin(), log.trip_delays.end());
  }
  const auto [r_avg, r_peak] = reward.summarize(true);
  const auto [q_avg, q_peak] = queue.summarize(false);
  const auto [d_avg, d_peak] = delay.summarize(false);
  const auto [s_avg, s_peak] = speed.summarize(false);
  const auto [f_avg, f_peak] = flow.summarize(false);
  result.average = {r_avg.value_or(0.0), q_avg.value_or(0.0), d_avg, s_avg, f_avg.value_or(0.0), std::nullopt};
  result.peak = {r_peak.value_or(0.0), q_peak.value_or(0.0), d_peak, s_peak, f_peak.value_or(0.0), std::nullopt};
  if (!trips.empty()) {
    double sum = 0.0;
    for (double d : trips) sum += d;
    result.average.trip_delay = sum / static_cast<double>(trips.size());
    result.peak.trip_delay = *std::max_element(trips.begin(), trips.end());
  }
}

EvaluationResult evaluate(const RunConfig &config, std::shared_ptr<const sim::Scenario> scenario,
                          rl::Controller &controller, const std::string &name) {
  EvaluationResult result;
  result.controller = name;
  for (std::size_t k = 0; k < config.eval.episodes; ++k)
    result.episodes.push_back(run_episode(config, scenario, controller, name, config.eval.seed_base + k));
  aggregate(result);
  return result;
}

std::string config_diff(const json &a, const json &b) {
  const json patch = json::diff(a, b);
  std::string out;
  for (const json &op : patch) {
    const std::string path = op.at("path").get<std::string>();
    json left, right;
    try {
      left = a.at(json::json_pointer(path));
    } catch (const json::exception &) {
    }
    if (op.contains("value")) right = op.at("value");
    out += "  " + path + ": " + left.dump() + " -> " + right.dump() + "\n";
  }
  return out;
}

EvaluationResult evaluate_checkpoint(const RunConfig &config, const json &checkpoint) {
  const RunConfig trained = RunConfig::from_json(checkpoint.at("config"));
  if (trained.digest() != config.digest() || checkpoint.at("config_digest").get<std::string>() != trained.digest())
    throw ConfigError("config digest mismatch: checkpoint " + checkpoint.at("config_digest").get<std::string>() +
                      ", config " + config.digest() + "\n" + config_diff(trained.to_json(), config.to_json()));
  rl::Trainer trainer(trained, make_scenario(trained));
  trainer.restore(checkpoint);
  // Evaluation settings come from the caller; the trained policy from the checkpoint.
  auto controller = trainer.make_controller(config.eval.sample, derive_seed(config.eval.seed_base, 0));
  return evaluate(config, make_scenario(trained), *controller, std::string(agent_kind_name(trained.agent)));
}

std::string eval_csv(const std::vector<EvaluationResult> &results) {
  std::ostringstream out;
  out << "controller,statistic,reward,avg_queue,avg_delay,avg_speed,trip_completion_flow,trip_delay\n";
  for (const EvaluationResult &r : results)
    for (const auto &[label, m] : {std::pair{"average", &r.average}, std::pair{"peak", &r.peak}})
      out << r.controller << ',' << label << ',' << format_number(m->reward) << ',' << format_number(m->avg_queue)
          << ',' << format_number(m->avg_delay) << ',' << format_number(m->avg_speed) << ','
          << format_number(m->trip_completion_flow) << ',' << format_number(m->trip_delay) << '\n';
  return out.str();
}

void print_table(std::ostream &out, const std::vector<EvaluationResult> &results) {
  auto cell = [](const std::optional<double> &v) {
    if (!v) return std::string("NA");
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << *v;
    return s.str();
  };
  const char *names[] = {"reward", "avg. queue length [veh]", "avg. intersection delay [s/veh]",
                         "avg. vehicle speed [m/s]", "trip completion flow [veh/s]", "trip delay [s]"};
  auto value = [](const MetricsRecord &m, int k) -> std::optional<double> {
    switch (k) {
    case 0: return m.reward;
    case 1: return m.avg_queue;
    case 2: return m.avg_delay;
    case 3: return m.avg_speed;
    case 4: return m.trip_completion_flow;
    default: return m.trip_delay;
    }
  };
  out << std::left << std::setw(34) << "metric";
  for (const auto &r : results) out << std::setw(18) << (r.controller + " avg");
  for (const auto &r : results) out << std::setw(18) << (r.controller + " peak");
  out << '\n';
  for (int k = 0; k < 6; ++k) {
    out << std::setw(34) << names[k];
    for (const auto &r : results) out << std::setw(18) << cell(value(r.average, k));
    for (const auto &r : results) out << std::setw(18) << cell(value(r.peak, k));
    out << '\n';
  }
}

void write_evaluation(const fs::path &dir, const std::vector<EvaluationResult> &results) {
  fs::create_directories(dir / "episodes");
  write_text(dir / "eval.csv", eval_csv(results));
  for (const EvaluationResult &r : results)
    for (const EpisodeLog &log : r.episodes)
      write_text(dir / "episodes" / (log.controller + "-" + std::to_string(log.seed) + ".csv"), episode_csv(log));
}

std::vector<MfdPoint> emit_mfd(const EpisodeLog &log, double window_s) {
  if (window_s <= 0.0) throw ConfigError("MFD window must be positive");
  const auto per_window = static_cast<std::size_t>(std::max(1.0, std::floor(window_s / log.delta_t)));
  std::vector<MfdPoint> points;
  auto mean_over = [&](std::size_t begin, std::size_t end, bool partial) {
    MfdPoint p;
    p.window = points.size();
    p.partial = partial;
    for (std::size_t t = begin; t < end; ++t) {
      p.accumulation += static_cast<double>(log.rows[t].accumulation);
      p.flow += log.rows[t].trip_completion_flow;
    }
    const double n = static_cast<double>(end - begin);
    p.accumulation /= n;
    p.flow /= n;
    points.push_back(p);
  };
  const std::size_t full = log.rows.size() / per_window;
  for (std::size_t w = 0; w < full; ++w) mean_over(w * per_window, (w + 1) * per_window, false);
  if (full == 0 && !log.rows.empty()) mean_over(0, log.rows.size(), true);
  return points;
}

std::string mfd_csv(const std::vector<EpisodeLog> &logs, double window_s) {
  std::ostringstream out;
  out << "controller,seed,window,accumulation,flow,partial\n";
  for (const EpisodeLog &log : logs)
    for (const MfdPoint &p : emit_mfd(log, window_s))
      out << log.controller << ',' << log.seed << ',' << p.window << ',' << format_number(p.accumulation) << ','
          << format_number(p.flow) << ',' << (p.partial ? 1 : 0) << '\n';
  return out.str();
}

} // namespace ma2c::harness
