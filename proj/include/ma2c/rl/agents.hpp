#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ma2c/config.hpp"
#include "ma2c/nn/network.hpp"
#include "ma2c/rng.hpp"
#include "ma2c/traffic_sim.hpp"

namespace ma2c::rl {

/// Per-agent input layout. Region members follow AgentNetwork::local_region
/// (self first), fingerprint sources follow the sorted neighbor list.
struct AgentLayout {
  std::vector<AgentId> region;
  std::vector<std::size_t> lane_blocks; // incoming lanes per region member
  std::size_t state_dim = 0;            // per measurement type
  std::vector<AgentId> neighbors;
  std::size_t fingerprint_dim = 0; // 0 when fingerprints are off
  std::size_t n_actions = 0;
  /// phase_lanes[p]: own-lane positions served by a green movement of p.
  std::vector<std::vector<std::size_t>> phase_lanes;
};

/// Turns raw simulator observations into normalized network inputs and raw
/// rewards into the per-agent training signal of the configured agent kind.
class Encoder {
public:
  Encoder(const sim::TrafficSim &env, const RunConfig &config);

  std::size_t size() const { return layouts_.size(); }
  const AgentLayout &layout(AgentId i) const { return layouts_.at(i); }
  const AgentNetwork &graph() const { return graph_; }

  /// {wave, wait, fingerprint} for agent i. Values are divided by their
  /// normalizer and clipped to [0, state_clip]; neighbor blocks are then
  /// scaled by alpha when spatial discounting is on. The fingerprint vector is
  /// empty when fingerprints are off.
  nn::StepInput encode(AgentId i, const sim::Observation &obs,
                       std::span<const std::vector<double>> last_policies) const;

  /// Flat normalized region state (wave then wait), never discounted.
  std::vector<double> features(AgentId i, const sim::Observation &obs) const;

  /// Spatially discounted (MA2C, IQL) or global (IA2C) reward per agent,
  /// divided by the reward normalizer and clipped to +-reward_clip.
  std::vector<double> shape_rewards(std::span<const double> raw) const;

  /// Uniform policy vectors (the fingerprint prior at episode start).
  std::vector<std::vector<double>> uniform_policies() const;

  nn::LayerSpec actor_spec(AgentId i) const;
  nn::LayerSpec critic_spec(AgentId i) const;
  nn::LayerSpec q_spec(AgentId i) const;

private:
  std::vector<double> normalized(std::span<const double> raw, double norm) const;

  RunConfig config_;
  AgentFlags flags_;
  AgentNetwork graph_;
  std::vector<AgentLayout> layouts_;
};

/// Chooses one phase per agent from the current observation.
class Controller {
public:
  virtual ~Controller() = default;
  virtual void begin_episode() = 0;
  virtual std::vector<std::size_t> act(const sim::Observation &obs) = 0;
};

/// Phase with the largest total wave over its served lanes.
class GreedyController final : public Controller {
public:
  explicit GreedyController(const Encoder &encoder) : encoder_(encoder) {}
  void begin_episode() override {}
  std::vector<std::size_t> act(const sim::Observation &obs) override;

private:
  const Encoder &encoder_;
};

/// Uniformly random phases.
class RandomController final : public Controller {
public:
  RandomController(const Encoder &encoder, std::uint64_t seed) : encoder_(encoder), rng_(seed) {}
  void begin_episode() override {}
  std::vector<std::size_t> act(const sim::Observation &obs) override;
  Rng &rng() { return rng_; }

private:
  const Encoder &encoder_;
  Rng rng_;
};

/// Round-robin phases with equal splits of `hold` decision steps each.
class FixedTimeController final : public Controller {
public:
  FixedTimeController(const Encoder &encoder, std::size_t hold) : encoder_(encoder), hold_(hold) {}
  void begin_episode() override { step_ = 0; }
  std::vector<std::size_t> act(const sim::Observation &obs) override;

private:
  const Encoder &encoder_;
  std::size_t hold_;
  std::size_t step_ = 0;
};

/// Recurrent actors with fingerprint exchange. Argmax by default; sampling
/// draws from pi with the given rng seed.
class ActorController final : public Controller {
public:
  ActorController(const Encoder &encoder, std::vector<nn::Network> actors, bool sample, std::uint64_t seed);
  void begin_episode() override;
  std::vector<std::size_t> act(const sim::Observation &obs) override;

private:
  const Encoder &encoder_;
  std::vector<nn::Network> actors_;
  std::vector<nn::RecurrentState> rec_;
  std::vector<std::vector<double>> last_policies_;
  bool sample_;
  Rng rng_;
};

/// Linear Q-function: Q(s, u) = theta_u . phi(s).
struct LinearQ {
  std::size_t n_actions = 0;
  std::size_t dim = 0;
  std::vector<double> theta; // n_actions x dim

  std::vector<double> values(std::span<const double> phi) const;
};

/// Greedy action selection on learned Q-functions.
class QController final : public Controller {
public:
  QController(const Encoder &encoder, std::vector<LinearQ> linear, std::vector<nn::Network> deep);
  void begin_episode() override {}
  std::vector<std::size_t> act(const sim::Observation &obs) override;

private:
  const Encoder &encoder_;
  std::vector<LinearQ> linear_;
  std::vector<nn::Network> deep_;
};

/// Q-values of a feed-forward Q network for one feature vector.
std::vector<double> deep_q_values(const nn::Network &net, std::span<const double> phi, std::size_t state_dim);

/// Output-layer init gain of the actors: a near-uniform initial policy.
inline constexpr double kPolicyHeadGain = 0.01;

/// Default hold for the fixed-time baseline, in decision steps.
inline constexpr std::size_t kFixedTimeHold = 6;

} // namespace ma2c::rl
