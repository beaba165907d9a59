#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ma2c/agent_graph.hpp"
#include "ma2c/rng.hpp"

namespace ma2c::rl {

/// Sum over hop distances d of alpha^d times the rewards of the agents at
/// distance d from agent i. Unreachable agents contribute nothing.
double spatial_discount_reward(const AgentNetwork &graph, std::span<const double> rewards, AgentId i, double alpha);

/// Scales every block after the first by alpha, in place. blocks lists the
/// length of each consecutive block (own block first).
void discount_neighbor_state(std::span<double> state, std::span<const std::size_t> blocks, double alpha);

/// n-step returns over one agent's minibatch. episode_end[t] marks the last
/// transition before an environment reset; the recursion restarts there, and
/// the bootstrap value is only added when the batch does not end an episode.
/// steps must increase by one except right after an episode end; throws
/// ContractError otherwise.
std::vector<double> estimate_returns(std::span<const std::int64_t> steps, std::span<const double> rewards,
                                     std::span<const char> episode_end, double bootstrap, double gamma);

struct PolicyLoss {
  double loss = 0.0;
  double entropy = 0.0; // batch mean
  std::vector<std::vector<double>> d_logits;
};

/// -mean(log pi(u_t) A_t) - beta * mean(entropy_t), with its gradient with
/// respect to the logits of every step.
PolicyLoss policy_loss(std::span<const std::vector<double>> logits, std::span<const std::size_t> actions,
                       std::span<const double> advantages, double beta);

struct ValueLoss {
  double loss = 0.0;
  std::vector<std::vector<double>> d_values;
};

/// mean((R_t - V_t)^2) / 2 and its gradient with respect to each V_t.
ValueLoss value_loss(std::span<const double> values, std::span<const double> returns);

/// Entropy of a probability vector (natural log; 0 log 0 = 0).
double entropy(std::span<const double> probs);

/// Sampled one-step Q target; terminal transitions do not bootstrap.
inline double iql_target(double reward, double max_next_q, double gamma, bool terminal) {
  return terminal ? reward : reward + gamma * max_next_q;
}

/// Inverse-CDF draw: the first index whose cumulative mass exceeds u.
std::size_t sample_categorical(std::span<const double> probs, double u);

std::size_t argmax(std::span<const double> values);

/// Linear decay from start to end over `horizon` steps, then flat.
struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.01;
  double horizon = 1.0; // steps

  double value(std::uint64_t step) const;
};

struct ReplayTuple {
  std::vector<double> state;
  std::size_t action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  bool terminal = false;
  std::uint64_t index = 0; // insertion counter
};

/// Fixed-capacity ring buffer with uniform sampling with replacement.
class ReplayBuffer {
public:
  explicit ReplayBuffer(std::size_t capacity = 1000);

  void push(ReplayTuple tuple);
  std::vector<const ReplayTuple *> sample(std::size_t count, Rng &rng) const;

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t pushed() const { return pushed_; }
  const std::vector<ReplayTuple> &items() const { return items_; }

  /// Restores the exact ring layout (checkpoint resume).
  void restore(std::vector<ReplayTuple> items, std::uint64_t pushed);

private:
  std::size_t capacity_;
  std::vector<ReplayTuple> items_;
  std::uint64_t pushed_ = 0;
};

/// Phase with the largest total wave over the lanes it serves; ties go to
/// the lowest phase index. phase_lanes[p] lists lane positions in lane_wave.
std::size_t greedy_action(std::span<const double> lane_wave, const std::vector<std::vector<std::size_t>> &phase_lanes);

} // namespace ma2c::rl
