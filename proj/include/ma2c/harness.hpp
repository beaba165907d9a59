#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ma2c/config.hpp"
#include "ma2c/rl/agents.hpp"
#include "ma2c/rl/trainer.hpp"
#include "ma2c/scenario.hpp"

namespace ma2c::harness {

namespace fs = std::filesystem;

/// The configured scenario file, or the built-in grid whose demand profile
/// spans one episode (episode_length * delta_t seconds).
std::shared_ptr<const sim::Scenario> make_scenario(const RunConfig &config);

/// Decimal text for CSV cells: shortest form that round-trips ("NA" if absent).
std::string format_number(double value);
std::string format_number(const std::optional<double> &value);

std::string training_csv_header();
std::string training_csv_row(const rl::TrainingRow &row);

struct TrainOptions {
  fs::path out_root = "out";
  std::string run_id;                 // empty: "<agent>-seed<seed>"
  std::optional<std::uint64_t> until; // stop early at this global step
  std::optional<fs::path> resume;     // checkpoint to continue from
};

/// Trains and writes config.json, training.csv and checkpoints/ under
/// out_root/run_id. Returns the run directory. DivergenceError is rethrown
/// after a diagnostic checkpoint has been written.
fs::path run_training(const RunConfig &config, const TrainOptions &options);

/// Reads a checkpoint document from disk.
nlohmann::json read_checkpoint(const fs::path &path);
void write_checkpoint(const nlohmann::json &doc, const fs::path &path);

/// One decision step of an evaluation episode.
struct EpisodeRow {
  std::uint64_t step = 0;
  double avg_queue = 0.0;
  std::optional<double> avg_delay;
  std::optional<double> avg_speed;
  std::uint64_t completed = 0;
  std::uint64_t accumulation = 0;
  double reward = 0.0;               // sum_i r_{t,i}
  double trip_completion_flow = 0.0; // veh/s over the step
  std::optional<double> trip_delay;  // mean over trips finished in the step
};

struct EpisodeLog {
  std::string controller;
  std::uint64_t seed = 0;
  int delta_t = 5;
  std::vector<EpisodeRow> rows;
  std::vector<double> trip_delays; // every completed trip
};

std::string episode_csv_header();
std::string episode_csv(const EpisodeLog &log);

/// Runs one episode of length episode_length from env seed `seed`.
EpisodeLog run_episode(const RunConfig &config, std::shared_ptr<const sim::Scenario> scenario,
                       rl::Controller &controller, const std::string &name, std::uint64_t seed);

/// Temporal average or peak of each metric (one Table I column block).
struct MetricsRecord {
  double reward = 0.0;
  double avg_queue = 0.0;
  std::optional<double> avg_delay;
  std::optional<double> avg_speed;
  double trip_completion_flow = 0.0;
  std::optional<double> trip_delay;
};

struct EvaluationResult {
  std::string controller;
  std::vector<EpisodeLog> episodes;
  MetricsRecord average;
  MetricsRecord peak;
};

/// Per-step means over episodes, then temporal mean and peak. The reward
/// peak is the most negative step; every other peak is a maximum. Trip delay
/// aggregates individual trips (mean and maximum).
void aggregate(EvaluationResult &result);

/// Evaluates a controller over seeds seed_base .. seed_base + episodes - 1.
EvaluationResult evaluate(const RunConfig &config, std::shared_ptr<const sim::Scenario> scenario,
                          rl::Controller &controller, const std::string &name);

/// Rebuilds a trained policy from a checkpoint and evaluates it. `config`
/// must have the checkpoint's digest, otherwise ConfigError lists the
/// differing fields.
EvaluationResult evaluate_checkpoint(const RunConfig &config, const nlohmann::json &checkpoint);

/// Human-readable list of fields that differ between two config documents.
std::string config_diff(const nlohmann::json &a, const nlohmann::json &b);

std::string eval_csv(const std::vector<EvaluationResult> &results);
void print_table(std::ostream &out, const std::vector<EvaluationResult> &results);

/// Writes eval.csv and episodes/<controller>-<seed>.csv under dir.
void write_evaluation(const fs::path &dir, const std::vector<EvaluationResult> &results);

struct MfdPoint {
  std::uint64_t window = 0;
  double accumulation = 0.0; // veh, window mean
  double flow = 0.0;         // veh/s, window mean trip completion rate
  bool partial = false;      // window shorter than requested
};

/// Non-overlapping windows of window_s seconds. A trailing partial window is
/// only emitted (flagged) when the episode is shorter than one window.
std::vector<MfdPoint> emit_mfd(const EpisodeLog &log, double window_s = 300.0);
std::string mfd_csv(const std::vector<EpisodeLog> &logs, double window_s = 300.0);

/// Parses an episode CSV written by episode_csv().
EpisodeLog read_episode_csv(const fs::path &path, int delta_t);

} // namespace ma2c::harness
