#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "ma2c/config.hpp"
#include "ma2c/nn/network.hpp"
#include "ma2c/rl/agents.hpp"
#include "ma2c/rl/core.hpp"
#include "ma2c/traffic_sim.hpp"

namespace ma2c::rl {

/// One training log row. A row is emitted every batch_size steps and at every
/// episode end; loss statistics average the updates since the previous row
/// and are absent when there were none.
struct TrainingRow {
  std::uint64_t episode = 0;
  std::uint64_t global_step = 0;
  double avg_episode_reward = 0.0; // mean over the episode's steps so far of sum_i r_{t,i}
  std::optional<double> policy_loss;
  std::optional<double> value_loss;
  std::optional<double> entropy;
  std::optional<double> grad_norm;
  double reward_std = 0.0; // step-wise std of sum_i r_{t,i} within the episode so far
  bool episode_done = false;
};

/// Data behind one agent's actor-critic update (instrumentation).
struct UpdateRecord {
  std::uint64_t global_step = 0;
  AgentId agent = 0;
  std::vector<std::int64_t> steps;
  std::vector<double> rewards;
  std::vector<char> episode_end;
  double bootstrap = 0.0;
  std::vector<double> returns;
};

/// Runs the synchronous multi-agent training loop for any agent kind.
/// Non-learning kinds (GREEDY, RANDOM, FIXED_TIME) follow the same loop
/// without updates, which yields comparable reward curves.
class Trainer {
public:
  Trainer(const RunConfig &config, std::shared_ptr<const sim::Scenario> scenario);

  /// Advances one decision step (resetting the environment at episode
  /// boundaries) and performs any due update. Returns false once
  /// total_steps has been reached.
  bool step();

  /// Steps until global_step reaches min(limit, total_steps).
  void run_until(std::uint64_t limit);

  std::uint64_t global_step() const { return global_step_; }
  std::uint64_t episode() const { return episode_; }
  std::uint64_t updates() const { return updates_; }
  std::uint64_t skipped_updates() const { return skipped_updates_; }
  const RunConfig &config() const { return config_; }
  const Encoder &encoder() const { return *encoder_; }
  const sim::TrafficSim &env() const { return env_; }

  const std::vector<nn::Network> &actors() const { return actors_; }
  const std::vector<nn::Network> &critics() const { return critics_; }
  const std::vector<LinearQ> &linear_q() const { return linear_q_; }
  const std::vector<nn::Network> &deep_q() const { return deep_q_; }

  std::function<void(const TrainingRow &)> on_row;
  std::function<void(const UpdateRecord &)> on_update;

  /// Full trainer state: bit-identical continuation after restore().
  nlohmann::json checkpoint() const;
  /// Throws ConfigError when the checkpoint was written under another config.
  void restore(const nlohmann::json &doc);

  /// Evaluation policy built from the current parameters.
  std::unique_ptr<Controller> make_controller(bool sample, std::uint64_t seed) const;

private:
  struct Batch {
    std::vector<nn::StepInput> inputs;
    std::vector<std::size_t> actions;
    std::vector<double> rewards;
    std::vector<char> resets;
    std::vector<char> ends;
    std::vector<std::int64_t> steps;
    nn::RecurrentState actor_rec0;
    nn::RecurrentState critic_rec0;
    void clear();
  };

  struct Stats {
    double policy_loss = 0.0, value_loss = 0.0, entropy = 0.0, grad_norm = 0.0;
    std::uint64_t count = 0;
  };

  void begin_episode();
  std::vector<std::size_t> act_actor_critic();
  std::vector<std::size_t> act_q();
  void update_actor_critic();
  void update_q(const std::vector<std::vector<double>> &phi, const std::vector<std::size_t> &actions,
                const std::vector<double> &rewards, bool episode_end);
  void emit_row(bool episode_done);

  RunConfig config_;
  std::shared_ptr<const sim::Scenario> scenario_;
  sim::TrafficSim env_;
  std::unique_ptr<Encoder> encoder_;

  // actor-critic
  std::vector<nn::Network> actors_, critics_;
  std::vector<nn::RecurrentState> actor_rec_, critic_rec_;
  std::vector<Batch> batches_;
  std::vector<std::vector<double>> last_policies_;
  // Q-learning
  std::vector<LinearQ> linear_q_, linear_q_target_;
  std::vector<nn::Network> deep_q_, deep_q_target_;
  std::vector<ReplayBuffer> replay_;
  EpsilonSchedule epsilon_;
  // baselines
  std::unique_ptr<Controller> baseline_;

  Rng policy_rng_;
  Rng replay_rng_;
  sim::Observation obs_;
  bool fresh_episode_ = true;
  std::uint64_t global_step_ = 0;
  std::uint64_t episode_ = 0;
  std::uint64_t episode_step_ = 0;
  std::uint64_t updates_ = 0;
  std::uint64_t skipped_updates_ = 0;
  std::vector<double> episode_rewards_; // sum_i r_{t,i} per step of the current episode
  Stats stats_;
};

/// Environment seed of a training episode.
std::uint64_t training_episode_seed(std::uint64_t seed, std::uint64_t episode);

} // namespace ma2c::rl
