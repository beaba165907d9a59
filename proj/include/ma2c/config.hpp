#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "ma2c/nn/network.hpp"
#include "ma2c/scenario.hpp"

namespace ma2c {

enum class AgentKind { MA2C, IA2C, IQL_LR, IQL_DNN, GREEDY, RANDOM, FIXED_TIME };

std::string_view agent_kind_name(AgentKind kind);
/// Case-insensitive; accepts "ma2c", "iql-lr", "iql_lr", ... Throws ConfigError.
AgentKind parse_agent_kind(std::string_view name);

struct AgentFlags {
  bool fingerprints = false;
  bool spatial_discount = false;
};

/// MA2C uses both stabilizers, IA2C neither (global reward, plain state).
AgentFlags agent_flags(AgentKind kind);

inline bool is_actor_critic(AgentKind k) { return k == AgentKind::MA2C || k == AgentKind::IA2C; }
inline bool is_q_learning(AgentKind k) { return k == AgentKind::IQL_LR || k == AgentKind::IQL_DNN; }
inline bool is_learning(AgentKind k) { return is_actor_critic(k) || is_q_learning(k); }

struct IqlConfig {
  double lr = 1e-4;
  std::size_t batch_size = 20;
  std::size_t replay_size = 1000;
  double eps_start = 1.0;
  double eps_end = 0.01;
  double eps_decay_fraction = 0.5; // of total training steps
  std::size_t target_sync = 500;   // steps
};

struct LayerSizes {
  std::size_t wave = 128;
  std::size_t wait = 32;
  std::size_t fingerprint = 64;
  std::size_t lstm = 64;
};

struct EvalConfig {
  std::size_t episodes = 10;
  std::uint64_t seed_base = 10000;
  bool sample = false; // sample from pi instead of argmax
};

/// Every hyperparameter of a run. Defaults are the published settings.
struct RunConfig {
  AgentKind agent = AgentKind::MA2C;
  double gamma = 0.99;
  double alpha = 0.75;
  double beta = 0.01;
  double lr_actor = 5e-4;
  double lr_critic = 2.5e-4;
  std::size_t batch_size = 120;
  std::size_t episode_length = 720;
  int delta_t = 5;
  int yellow_time = 2;
  double reward_coef = 0.2;
  double norm_wave = 5.0;
  double norm_wait = 100.0;
  double norm_reward = 2000.0;
  double state_clip = 2.0;
  double reward_clip = 2.0;
  double grad_clip = 40.0;
  std::uint64_t total_steps = 1'000'000;
  std::uint64_t checkpoint_interval = 0; // steps; 0 writes only the final checkpoint
  std::uint64_t seed = 0;
  IqlConfig iql;
  LayerSizes layers;
  nn::RmsPropSettings rmsprop;
  EvalConfig eval;
  std::string scenario; // path; empty selects the built-in grid
  sim::GridParams grid;

  /// Throws ConfigError naming the field and its bound.
  void validate() const;

  nlohmann::json to_json() const;
  /// Starts from defaults; unknown keys raise ConfigError with the nearest
  /// valid key.
  static RunConfig from_json(const nlohmann::json &doc);

  /// Hex FNV-1a digest over every field that affects training.
  std::string digest() const;
};

/// Empty or missing-content files yield the defaults.
RunConfig load_config(const std::filesystem::path &path);

} // namespace ma2c
