#include "ma2c/rl/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ma2c/error.hpp"
#include "ma2c/nn/network.hpp"

namespace ma2c::rl {

double spatial_discount_reward(const AgentNetwork &graph, std::span<const double> rewards, AgentId i, double alpha) {
  if (rewards.size() != graph.size()) throw ContractError("reward vector does not cover every agent");
  // Single pass in agent order: alpha = 1 reduces to the plain sum over j and
  // alpha = 0 to r_i exactly.
  double total = 0.0;
  for (AgentId j = 0; j < graph.size(); ++j) {
    const Hops d = graph.distance(i, j);
    if (d == kUnreachable) continue;
    total += std::pow(alpha, static_cast<double>(d)) * rewards[j];
  }
  return total;
}

void discount_neighbor_state(std::span<double> state, std::span<const std::size_t> blocks, double alpha) {
  std::size_t offset = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (offset + blocks[b] > state.size()) throw ContractError("state blocks exceed the state length");
    if (b > 0)
      for (std::size_t k = 0; k < blocks[b]; ++k) state[offset + k] *= alpha;
    offset += blocks[b];
  }
}

std::vector<double> estimate_returns(std::span<const std::int64_t> steps, std::span<const double> rewards,
                                     std::span<const char> episode_end, double bootstrap, double gamma) {
  const std::size_t n = rewards.size();
  if (steps.size() != n || episode_end.size() != n) throw ContractError("batch arrays differ in length");
  for (std::size_t t = 1; t < n; ++t)
    if (!episode_end[t - 1] && steps[t] != steps[t - 1] + 1)
      throw ContractError("minibatch is not time-ordered at position " + std::to_string(t));
  std::vector<double> returns(n);
  double running = (n > 0 && episode_end[n - 1]) ? 0.0 : bootstrap;
  for (std::size_t t = n; t-- > 0;) {
    if (episode_end[t]) running = 0.0;
    running = rewards[t] + gamma * running;
    returns[t] = running;
  }
  return returns;
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

PolicyLoss policy_loss(std::span<const std::vector<double>> logits, std::span<const std::size_t> actions,
                       std::span<const double> advantages, double beta) {
  const std::size_t n = logits.size();
  if (actions.size() != n || advantages.size() != n) throw ContractError("policy loss inputs differ in length");
  PolicyLoss out;
  out.d_logits.resize(n);
  if (n == 0) return out;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto &z = logits[t];
    if (actions[t] >= z.size()) throw ContractError("action index outside the policy support");
    const std::vector<double> pi = nn::softmax(z);
    const double top = *std::max_element(z.begin(), z.end());
    double log_norm = 0.0;
    for (double x : z) log_norm += std::exp(x - top);
    log_norm = top + std::log(log_norm);
    const double log_pu = z[actions[t]] - log_norm;
    const double h = entropy(pi);
    out.loss -= inv * (log_pu * advantages[t] + beta * h);
    out.entropy += inv * h;
    auto &d = out.d_logits[t];
    d.resize(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double log_pk = z[k] - log_norm;
      const double d_logp = (k == actions[t] ? 1.0 : 0.0) - pi[k];
      const double d_entropy = -pi[k] * (log_pk + h);
      d[k] = -inv * (advantages[t] * d_logp + beta * d_entropy);
    }
  }
  return out;
}

ValueLoss value_loss(std::span<const double> values, std::span<const double> returns) {
  const std::size_t n = values.size();
  if (returns.size() != n) throw ContractError("value loss inputs differ in length");
  ValueLoss out;
  out.d_values.resize(n);
  if (n == 0) return out;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double err = returns[t] - values[t];
    out.loss += 0.5 * inv * err * err;
    out.d_values[t] = {-inv * err};
  }
  return out;
}

std::size_t sample_categorical(std::span<const double> probs, double u) {
  double cum = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    cum += probs[k];
    if (u < cum) return k;
  }
  // u at or beyond the accumulated mass (round-off): last action with mass.
  for (std::size_t k = probs.size(); k-- > 0;)
    if (probs[k] > 0.0) return k;
  throw ContractError("categorical distribution has no mass");
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ContractError("argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

double EpsilonSchedule::value(std::uint64_t step) const {
  const double frac = horizon > 0.0 ? std::min(static_cast<double>(step) / horizon, 1.0) : 1.0;
  return start + (end - start) * frac;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ConfigError("replay buffer capacity must be >= 1");
  items_.reserve(capacity_);
}

void ReplayBuffer::push(ReplayTuple tuple) {
  tuple.index = pushed_;
  if (items_.size() < capacity_)
    items_.push_back(std::move(tuple));
  else
    items_[pushed_ % capacity_] = std::move(tuple);
  ++pushed_;
}

std::vector<const ReplayTuple *> ReplayBuffer::sample(std::size_t count, Rng &rng) const {
  if (items_.empty()) throw ContractError("sampling from an empty replay buffer");
  std::vector<const ReplayTuple *> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(&items_[rng.below(items_.size())]);
  return out;
}

void ReplayBuffer::restore(std::vector<ReplayTuple> items, std::uint64_t pushed) {
  if (items.size() > capacity_) throw ConfigError("replay checkpoint exceeds the buffer capacity");
  items_ = std::move(items);
  pushed_ = pushed;
}

std::size_t greedy_action(std::span<const double> lane_wave, const std::vector<std::vector<std::size_t>> &phase_lanes) {
  std::size_t best = 0;
  double best_sum = -std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < phase_lanes.size(); ++p) {
    double sum = 0.0;
    for (std::size_t lane : phase_lanes[p]) sum += lane_wave[lane];
    if (sum > best_sum) {
      best_sum = sum;
      best = p;
    }
  }
  return best;
}

} // namespace ma2c::rl
