#include "ma2c/rl/agents.hpp"

#include <algorithm>
#include <cmath>

#include "ma2c/error.hpp"
#include "ma2c/rl/core.hpp"

namespace ma2c::rl {

Encoder::Encoder(const sim::TrafficSim &env, const RunConfig &config)
    : config_(config), flags_(agent_flags(config.agent)), graph_(env.scenario().agent_network()) {
  const sim::Scenario &s = env.scenario();
  layouts_.resize(env.n_agents());
  for (AgentId i = 0; i < env.n_agents(); ++i) {
    AgentLayout &l = layouts_[i];
    l.region = graph_.local_region(i);
    for (AgentId j : l.region) {
      l.lane_blocks.push_back(env.agent_lanes(j).size());
      l.state_dim += env.agent_lanes(j).size();
    }
    l.neighbors = graph_.neighbors(i);
    if (flags_.fingerprints)
      for (AgentId j : l.neighbors) l.fingerprint_dim += env.n_phases(j);
    l.n_actions = env.n_phases(i);

    const auto incoming = s.incoming_lanes(i);
    const sim::Intersection &x = s.intersections[i];
    l.phase_lanes.resize(x.phases.size());
    for (std::size_t p = 0; p < x.phases.size(); ++p) {
      for (std::size_t m : x.phases[p]) {
        const sim::Movement &mv = x.movements[m];
        const auto it = std::find(incoming.begin(), incoming.end(), std::make_pair(mv.in_link, mv.lane));
        if (it == incoming.end()) throw ConfigError("phase movement on a lane that is not incoming");
        l.phase_lanes[p].push_back(static_cast<std::size_t>(it - incoming.begin()));
      }
      std::sort(l.phase_lanes[p].begin(), l.phase_lanes[p].end());
      l.phase_lanes[p].erase(std::unique(l.phase_lanes[p].begin(), l.phase_lanes[p].end()), l.phase_lanes[p].end());
    }
  }
}

std::vector<double> Encoder::normalized(std::span<const double> raw, double norm) const {
  std::vector<double> out(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) out[k] = std::clamp(raw[k] / norm, 0.0, config_.state_clip);
  return out;
}

nn::StepInput Encoder::encode(AgentId i, const sim::Observation &obs,
                              std::span<const std::vector<double>> last_policies) const {
  const AgentLayout &l = layouts_.at(i);
  nn::StepInput in(3);
  for (AgentId j : l.region) {
    const auto wave = normalized(obs.wave.at(j), config_.norm_wave);
    const auto wait = normalized(obs.wait.at(j), config_.norm_wait);
    in[0].insert(in[0].end(), wave.begin(), wave.end());
    in[1].insert(in[1].end(), wait.begin(), wait.end());
  }
  if (flags_.spatial_discount) {
    discount_neighbor_state(in[0], l.lane_blocks, config_.alpha);
    discount_neighbor_state(in[1], l.lane_blocks, config_.alpha);
  }
  if (flags_.fingerprints)
    for (AgentId j : l.neighbors) {
      const auto &pi = last_policies[j];
      in[2].insert(in[2].end(), pi.begin(), pi.end());
    }
  return in;
}

std::vector<double> Encoder::features(AgentId i, const sim::Observation &obs) const {
  const AgentLayout &l = layouts_.at(i);
  std::vector<double> wave, wait;
  for (AgentId j : l.region) {
    const auto a = normalized(obs.wave.at(j), config_.norm_wave);
    const auto b = normalized(obs.wait.at(j), config_.norm_wait);
    wave.insert(wave.end(), a.begin(), a.end());
    wait.insert(wait.end(), b.begin(), b.end());
  }
  wave.insert(wave.end(), wait.begin(), wait.end());
  return wave;
}

std::vector<double> Encoder::shape_rewards(std::span<const double> raw) const {
  std::vector<double> out(raw.size());
  double global = 0.0;
  for (double r : raw) global += r;
  for (AgentId i = 0; i < raw.size(); ++i) {
    const double r = config_.agent == AgentKind::IA2C ? global
                                                      : spatial_discount_reward(graph_, raw, i, config_.alpha);
    out[i] = std::clamp(r / config_.norm_reward, -config_.reward_clip, config_.reward_clip);
  }
  return out;
}

std::vector<std::vector<double>> Encoder::uniform_policies() const {
  std::vector<std::vector<double>> out;
  for (const AgentLayout &l : layouts_)
    out.emplace_back(l.n_actions, 1.0 / static_cast<double>(l.n_actions));
  return out;
}

nn::LayerSpec Encoder::actor_spec(AgentId i) const {
  const AgentLayout &l = layouts_.at(i);
  nn::LayerSpec spec;
  spec.groups = {{"wave", l.state_dim, config_.layers.wave},
                 {"wait", l.state_dim, config_.layers.wait},
                 {"fingerprint", l.fingerprint_dim, config_.layers.fingerprint}};
  spec.core = nn::CoreKind::Lstm;
  spec.core_hidden = config_.layers.lstm;
  spec.head = nn::HeadKind::Softmax;
  spec.head_dim = l.n_actions;
  spec.head_gain = kPolicyHeadGain;
  return spec;
}

nn::LayerSpec Encoder::critic_spec(AgentId i) const {
  nn::LayerSpec spec = actor_spec(i);
  spec.head = nn::HeadKind::Linear;
  spec.head_dim = 1;
  spec.head_gain = 1.0;
  return spec;
}

nn::LayerSpec Encoder::q_spec(AgentId i) const {
  const AgentLayout &l = layouts_.at(i);
  nn::LayerSpec spec;
  spec.groups = {{"wave", l.state_dim, config_.layers.wave}, {"wait", l.state_dim, config_.layers.wait}};
  spec.core = nn::CoreKind::Dense;
  spec.core_hidden = config_.layers.lstm;
  spec.head = nn::HeadKind::Linear;
  spec.head_dim = l.n_actions;
  return spec;
}

std::vector<std::size_t> GreedyController::act(const sim::Observation &obs) {
  std::vector<std::size_t> out(encoder_.size());
  for (AgentId i = 0; i < out.size(); ++i) out[i] = greedy_action(obs.wave.at(i), encoder_.layout(i).phase_lanes);
  return out;
}

std::vector<std::size_t> RandomController::act(const sim::Observation &) {
  std::vector<std::size_t> out(encoder_.size());
  for (AgentId i = 0; i < out.size(); ++i) out[i] = rng_.below(encoder_.layout(i).n_actions);
  return out;
}

std::vector<std::size_t> FixedTimeController::act(const sim::Observation &) {
  std::vector<std::size_t> out(encoder_.size());
  for (AgentId i = 0; i < out.size(); ++i) out[i] = (step_ / hold_) % encoder_.layout(i).n_actions;
  ++step_;
  return out;
}

ActorController::ActorController(const Encoder &encoder, std::vector<nn::Network> actors, bool sample,
                                 std::uint64_t seed)
    : encoder_(encoder), actors_(std::move(actors)), sample_(sample), rng_(seed) {
  if (actors_.size() != encoder_.size()) throw ConfigError("checkpoint agent count does not match the scenario");
  begin_episode();
}

void ActorController::begin_episode() {
  rec_.clear();
  for (const auto &a : actors_) rec_.push_back(a.initial_state());
  last_policies_ = encoder_.uniform_policies();
}

std::vector<std::size_t> ActorController::act(const sim::Observation &obs) {
  std::vector<std::size_t> out(actors_.size());
  std::vector<std::vector<double>> policies(actors_.size());
  for (AgentId i = 0; i < actors_.size(); ++i) {
    policies[i] = actors_[i].forward(encoder_.encode(i, obs, last_policies_), rec_[i]);
    out[i] = sample_ ? sample_categorical(policies[i], rng_.uniform()) : argmax(policies[i]);
  }
  last_policies_ = std::move(policies);
  return out;
}

std::vector<double> LinearQ::values(std::span<const double> phi) const {
  if (phi.size() != dim) throw ContractError("linear Q feature size mismatch");
  std::vector<double> q(n_actions);
  for (std::size_t u = 0; u < n_actions; ++u) {
    double sum = 0.0;
    for (std::size_t k = 0; k < dim; ++k) sum += theta[u * dim + k] * phi[k];
    q[u] = sum;
  }
  return q;
}

std::vector<double> deep_q_values(const nn::Network &net, std::span<const double> phi, std::size_t state_dim) {
  if (phi.size() != 2 * state_dim) throw ContractError("deep Q feature size mismatch");
  nn::StepInput in{std::vector<double>(phi.begin(), phi.begin() + static_cast<std::ptrdiff_t>(state_dim)),
                   std::vector<double>(phi.begin() + static_cast<std::ptrdiff_t>(state_dim), phi.end())};
  nn::RecurrentState rec = net.initial_state();
  return net.forward(in, rec);
}

QController::QController(const Encoder &encoder, std::vector<LinearQ> linear, std::vector<nn::Network> deep)
    : encoder_(encoder), linear_(std::move(linear)), deep_(std::move(deep)) {
  if (linear_.size() + deep_.size() != encoder_.size())
    throw ConfigError("checkpoint agent count does not match the scenario");
}

std::vector<std::size_t> QController::act(const sim::Observation &obs) {
  std::vector<std::size_t> out(encoder_.size());
  for (AgentId i = 0; i < out.size(); ++i) {
    const auto phi = encoder_.features(i, obs);
    out[i] = argmax(linear_.empty() ? deep_q_values(deep_[i], phi, encoder_.layout(i).state_dim)
                                    : linear_[i].values(phi));
  }
  return out;
}

} // namespace ma2c::rl
