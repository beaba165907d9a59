#include "ma2c/rl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ma2c/error.hpp"

namespace ma2c::rl {

using nlohmann::json;

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kPolicyStream = 2;
constexpr std::uint64_t kReplayStream = 3;
constexpr std::uint64_t kEpisodeStream = 1ULL << 32;

json rec_to_json(const nn::RecurrentState &r) { return {{"h", r.h}, {"c", r.c}}; }

nn::RecurrentState rec_from_json(const json &doc) {
  return {doc.at("h").get<std::vector<double>>(), doc.at("c").get<std::vector<double>>()};
}

void require_finite(std::span<const double> values, const char *what) {
  for (double v : values)
    if (!std::isfinite(v)) throw DivergenceError(std::string("non-finite ") + what);
}

sim::MdpTiming timing_of(const RunConfig &c) { return {c.delta_t, c.yellow_time, c.reward_coef}; }

} // namespace

std::uint64_t training_episode_seed(std::uint64_t seed, std::uint64_t episode) {
  return derive_seed(seed, kEpisodeStream + episode);
}

void Trainer::Batch::clear() {
  inputs.clear();
  actions.clear();
  rewards.clear();
  resets.clear();
  ends.clear();
  steps.clear();
}

Trainer::Trainer(const RunConfig &config, std::shared_ptr<const sim::Scenario> scenario)
    : config_(config), scenario_(std::move(scenario)), env_(scenario_, timing_of(config)),
      policy_rng_(derive_seed(config.seed, kPolicyStream)), replay_rng_(derive_seed(config.seed, kReplayStream)) {
  config_.validate();
  encoder_ = std::make_unique<Encoder>(env_, config_);
  Rng init(derive_seed(config_.seed, kInitStream));
  const std::size_t n = env_.n_agents();
  if (is_actor_critic(config_.agent)) {
    for (AgentId i = 0; i < n; ++i) {
      actors_.emplace_back(encoder_->actor_spec(i), init);
      critics_.emplace_back(encoder_->critic_spec(i), init);
    }
    batches_.resize(n);
  } else if (config_.agent == AgentKind::IQL_LR) {
    for (AgentId i = 0; i < n; ++i) {
      const AgentLayout &l = encoder_->layout(i);
      linear_q_.push_back({l.n_actions, 2 * l.state_dim, std::vector<double>(l.n_actions * 2 * l.state_dim, 0.0)});
    }
    linear_q_target_ = linear_q_;
  } else if (config_.agent == AgentKind::IQL_DNN) {
    for (AgentId i = 0; i < n; ++i) deep_q_.emplace_back(encoder_->q_spec(i), init);
    deep_q_target_ = deep_q_;
  }
  if (is_q_learning(config_.agent)) {
    replay_.assign(n, ReplayBuffer(config_.iql.replay_size));
    epsilon_ = {config_.iql.eps_start, config_.iql.eps_end,
                config_.iql.eps_decay_fraction * static_cast<double>(config_.total_steps)};
  }
}

void Trainer::begin_episode() {
  obs_ = env_.reset(training_episode_seed(config_.seed, episode_));
  episode_step_ = 0;
  episode_rewards_.clear();
  last_policies_ = encoder_->uniform_policies();
  actor_rec_.clear();
  critic_rec_.clear();
  for (const auto &a : actors_) actor_rec_.push_back(a.initial_state());
  for (const auto &c : critics_) critic_rec_.push_back(c.initial_state());
}

std::vector<std::size_t> Trainer::act_actor_critic() {
  const std::size_t n = actors_.size();
  std::vector<std::size_t> actions(n);
  std::vector<std::vector<double>> policies(n);
  for (AgentId i = 0; i < n; ++i) {
    Batch &b = batches_[i];
    if (b.inputs.empty()) {
      b.actor_rec0 = actor_rec_[i];
      b.critic_rec0 = critic_rec_[i];
    }
    nn::StepInput input = encoder_->encode(i, obs_, last_policies_);
    policies[i] = actors_[i].forward(input, actor_rec_[i]);
    require_finite(policies[i], "policy");
    actions[i] = sample_categorical(policies[i], policy_rng_.uniform());
    b.inputs.push_back(std::move(input));
    b.actions.push_back(actions[i]);
    b.resets.push_back(episode_step_ == 0 ? 1 : 0);
    b.steps.push_back(static_cast<std::int64_t>(global_step_));
  }
  last_policies_ = std::move(policies);
  return actions;
}

std::vector<std::size_t> Trainer::act_q() {
  const double eps = epsilon_.value(global_step_);
  std::vector<std::size_t> actions(encoder_->size());
  for (AgentId i = 0; i < actions.size(); ++i) {
    const double u = policy_rng_.uniform();
    const std::size_t n_actions = encoder_->layout(i).n_actions;
    if (u < eps) {
      actions[i] = policy_rng_.below(n_actions);
    } else {
      const auto phi = encoder_->features(i, obs_);
      actions[i] = argmax(linear_q_.empty() ? deep_q_values(deep_q_[i], phi, encoder_->layout(i).state_dim)
                                            : linear_q_[i].values(phi));
    }
  }
  return actions;
}

bool Trainer::step() {
  if (global_step_ >= config_.total_steps) return false;
  if (fresh_episode_) {
    begin_episode();
    fresh_episode_ = false;
  }
  const std::size_t n = encoder_->size();
  std::vector<std::size_t> actions;
  std::vector<std::vector<double>> phi;
  switch (config_.agent) {
  case AgentKind::MA2C:
  case AgentKind::IA2C:
    actions = act_actor_critic();
    break;
  case AgentKind::IQL_LR:
  case AgentKind::IQL_DNN:
    for (AgentId i = 0; i < n; ++i) phi.push_back(encoder_->features(i, obs_));
    actions = act_q();
    break;
  case AgentKind::GREEDY:
    actions = GreedyController(*encoder_).act(obs_);
    break;
  case AgentKind::RANDOM:
    actions.resize(n);
    for (AgentId i = 0; i < n; ++i) actions[i] = policy_rng_.below(encoder_->layout(i).n_actions);
    break;
  case AgentKind::FIXED_TIME:
    actions.resize(n);
    for (AgentId i = 0; i < n; ++i) actions[i] = (episode_step_ / kFixedTimeHold) % encoder_->layout(i).n_actions;
    break;
  }

  sim::StepResult result = env_.step(actions);
  obs_ = std::move(result.obs);
  const std::vector<double> shaped = encoder_->shape_rewards(result.rewards);
  episode_rewards_.push_back(std::accumulate(result.rewards.begin(), result.rewards.end(), 0.0));
  ++episode_step_;
  ++global_step_;
  const bool episode_end = episode_step_ == config_.episode_length;

  if (is_actor_critic(config_.agent)) {
    for (AgentId i = 0; i < n; ++i) {
      batches_[i].rewards.push_back(shaped[i]);
      batches_[i].ends.push_back(episode_end ? 1 : 0);
    }
    if (batches_[0].inputs.size() == config_.batch_size) update_actor_critic();
  } else if (is_q_learning(config_.agent)) {
    update_q(phi, actions, shaped, episode_end);
  }

  if (episode_end) {
    emit_row(true);
    ++episode_;
    fresh_episode_ = true;
  } else if (global_step_ % config_.batch_size == 0) {
    emit_row(false);
  }
  return true;
}

void Trainer::run_until(std::uint64_t limit) {
  while (global_step_ < limit && step()) {
  }
}

void Trainer::update_actor_critic() {
  const std::size_t n = actors_.size();
  double p_loss = 0.0, v_loss = 0.0, ent = 0.0, norm = 0.0;
  for (AgentId i = 0; i < n; ++i) {
    Batch &b = batches_[i];
    const nn::SequenceCache critic_cache = critics_[i].forward_sequence(b.inputs, b.resets, b.critic_rec0);
    std::vector<double> values;
    for (const auto &s : critic_cache.steps) values.push_back(s.head[0]);
    double bootstrap = 0.0;
    if (!b.ends.back()) {
      nn::RecurrentState rec = critic_cache.final_state;
      bootstrap = critics_[i].forward(encoder_->encode(i, obs_, last_policies_), rec)[0];
    }
    const std::vector<double> returns = estimate_returns(b.steps, b.rewards, b.ends, bootstrap, config_.gamma);
    if (on_update) on_update({global_step_, i, b.steps, b.rewards, b.ends, bootstrap, returns});

    const ValueLoss vl = value_loss(values, returns);
    nn::Gradients critic_grads = critics_[i].backward(critic_cache, vl.d_values);
    nn::clip_gradients(critic_grads, config_.grad_clip);

    std::vector<double> advantages(returns.size());
    for (std::size_t t = 0; t < returns.size(); ++t) advantages[t] = returns[t] - values[t];
    const nn::SequenceCache actor_cache = actors_[i].forward_sequence(b.inputs, b.resets, b.actor_rec0);
    std::vector<std::vector<double>> logits;
    for (const auto &s : actor_cache.steps) logits.push_back(s.head);
    const PolicyLoss pl = policy_loss(logits, b.actions, advantages, config_.beta);
    if (!std::isfinite(pl.loss) || !std::isfinite(vl.loss)) throw DivergenceError("non-finite loss");
    nn::Gradients actor_grads = actors_[i].backward(actor_cache, pl.d_logits);
    const double actor_norm = nn::clip_gradients(actor_grads, config_.grad_clip);

    nn::rmsprop_update(critics_[i].params(), critic_grads, config_.lr_critic, config_.rmsprop);
    nn::rmsprop_update(actors_[i].params(), actor_grads, config_.lr_actor, config_.rmsprop);
    critic_rec_[i] = critic_cache.final_state;
    b.clear();

    p_loss += pl.loss;
    v_loss += vl.loss;
    ent += pl.entropy;
    norm += actor_norm;
  }
  const double inv = 1.0 / static_cast<double>(n);
  stats_.policy_loss += p_loss * inv;
  stats_.value_loss += v_loss * inv;
  stats_.entropy += ent * inv;
  stats_.grad_norm += norm * inv;
  ++stats_.count;
  ++updates_;
}

void Trainer::update_q(const std::vector<std::vector<double>> &phi, const std::vector<std::size_t> &actions,
                       const std::vector<double> &rewards, bool episode_end) {
  const std::size_t n = encoder_->size();
  for (AgentId i = 0; i < n; ++i)
    replay_[i].push({phi[i], actions[i], rewards[i], encoder_->features(i, obs_), episode_end, 0});

  if (replay_[0].size() < config_.iql.batch_size) {
    ++skipped_updates_;
  } else {
    double loss = 0.0, norm = 0.0;
    for (AgentId i = 0; i < n; ++i) {
      const auto sample = replay_[i].sample(config_.iql.batch_size, replay_rng_);
      const double inv = 1.0 / static_cast<double>(sample.size());
      const std::size_t dim = encoder_->layout(i).state_dim;
      if (!linear_q_.empty()) {
        LinearQ &q = linear_q_[i];
        std::vector<double> grad(q.theta.size(), 0.0);
        for (const ReplayTuple *tp : sample) {
          const auto next = linear_q_target_[i].values(tp->next_state);
          const double target =
              iql_target(tp->reward, *std::max_element(next.begin(), next.end()), config_.gamma, tp->terminal);
          const double delta = target - q.values(tp->state)[tp->action];
          loss += 0.5 * inv * delta * delta;
          for (std::size_t k = 0; k < q.dim; ++k) grad[tp->action * q.dim + k] += inv * delta * tp->state[k];
        }
        require_finite(grad, "Q gradient");
        double sq = 0.0;
        for (double g : grad) sq += g * g;
        norm += std::sqrt(sq);
        for (std::size_t k = 0; k < grad.size(); ++k) q.theta[k] += config_.iql.lr * grad[k];
      } else {
        std::vector<nn::StepInput> inputs;
        for (const ReplayTuple *tp : sample)
          inputs.push_back({std::vector<double>(tp->state.begin(), tp->state.begin() + static_cast<std::ptrdiff_t>(dim)),
                            std::vector<double>(tp->state.begin() + static_cast<std::ptrdiff_t>(dim), tp->state.end())});
        const std::vector<char> resets(sample.size(), 1);
        const nn::SequenceCache cache = deep_q_[i].forward_sequence(inputs, resets, deep_q_[i].initial_state());
        std::vector<std::vector<double>> d_head(sample.size());
        for (std::size_t k = 0; k < sample.size(); ++k) {
          const ReplayTuple &tp = *sample[k];
          const auto next = deep_q_values(deep_q_target_[i], tp.next_state, dim);
          const double target =
              iql_target(tp.reward, *std::max_element(next.begin(), next.end()), config_.gamma, tp.terminal);
          const double delta = target - cache.steps[k].head[tp.action];
          loss += 0.5 * inv * delta * delta;
          d_head[k].assign(cache.steps[k].head.size(), 0.0);
          d_head[k][tp.action] = -inv * delta;
        }
        nn::Gradients grads = deep_q_[i].backward(cache, d_head);
        norm += nn::clip_gradients(grads, config_.grad_clip);
        nn::rmsprop_update(deep_q_[i].params(), grads, config_.iql.lr, config_.rmsprop);
      }
    }
    if (!std::isfinite(loss)) throw DivergenceError("non-finite Q loss");
    stats_.value_loss += loss / static_cast<double>(n);
    stats_.grad_norm += norm / static_cast<double>(n);
    ++stats_.count;
    ++updates_;
  }
  if (global_step_ % config_.iql.target_sync == 0) {
    linear_q_target_ = linear_q_;
    deep_q_target_ = deep_q_;
  }
}

void Trainer::emit_row(bool episode_done) {
  TrainingRow row;
  row.episode = episode_;
  row.global_step = global_step_;
  const double steps = static_cast<double>(episode_rewards_.size());
  double mean = 0.0;
  for (double r : episode_rewards_) mean += r;
  mean /= steps;
  double var = 0.0;
  for (double r : episode_rewards_) var += (r - mean) * (r - mean);
  row.avg_episode_reward = mean;
  row.reward_std = std::sqrt(var / steps);
  if (stats_.count > 0) {
    const double inv = 1.0 / static_cast<double>(stats_.count);
    if (is_actor_critic(config_.agent)) {
      row.policy_loss = stats_.policy_loss * inv;
      row.entropy = stats_.entropy * inv;
    }
    row.value_loss = stats_.value_loss * inv;
    row.grad_norm = stats_.grad_norm * inv;
  }
  row.episode_done = episode_done;
  stats_ = Stats{};
  if (on_row) on_row(row);
}

json Trainer::checkpoint() const {
  json doc;
  doc["format"] = "ma2c-checkpoint";
  doc["version"] = 1;
  doc["config_digest"] = config_.digest();
  doc["config"] = config_.to_json();
  doc["global_step"] = global_step_;
  doc["episode"] = episode_;
  doc["episode_step"] = episode_step_;
  doc["updates"] = updates_;
  doc["skipped_updates"] = skipped_updates_;
  doc["fresh_episode"] = fresh_episode_;
  doc["episode_rewards"] = episode_rewards_;
  doc["stats"] = {stats_.policy_loss, stats_.value_loss, stats_.entropy, stats_.grad_norm, stats_.count};
  doc["policy_rng"] = policy_rng_.save();
  doc["replay_rng"] = replay_rng_.save();
  doc["env"] = env_.save_state();
  doc["last_policies"] = last_policies_;

  json agents = json::array();
  for (AgentId i = 0; i < actors_.size(); ++i) {
    const Batch &b = batches_[i];
    json inputs = json::array();
    for (const auto &in : b.inputs) inputs.push_back(in);
    agents.push_back({{"actor", actors_[i].to_json()},
                      {"critic", critics_[i].to_json()},
                      {"actor_rec", actor_rec_.empty() ? json() : rec_to_json(actor_rec_[i])},
                      {"critic_rec", critic_rec_.empty() ? json() : rec_to_json(critic_rec_[i])},
                      {"batch",
                       {{"inputs", inputs},
                        {"actions", b.actions},
                        {"rewards", b.rewards},
                        {"resets", std::vector<int>(b.resets.begin(), b.resets.end())},
                        {"ends", std::vector<int>(b.ends.begin(), b.ends.end())},
                        {"steps", b.steps},
                        {"actor_rec0", rec_to_json(b.actor_rec0)},
                        {"critic_rec0", rec_to_json(b.critic_rec0)}}}});
  }
  doc["actor_critic"] = std::move(agents);

  json q = json::array();
  for (AgentId i = 0; i < replay_.size(); ++i) {
    json entry;
    if (!linear_q_.empty()) {
      entry["theta"] = linear_q_[i].theta;
      entry["theta_target"] = linear_q_target_[i].theta;
    } else {
      entry["net"] = deep_q_[i].to_json();
      entry["target"] = deep_q_target_[i].to_json();
    }
    json items = json::array();
    for (const ReplayTuple &t : replay_[i].items())
      items.push_back({t.state, t.action, t.reward, t.next_state, t.terminal, t.index});
    entry["replay"] = {{"items", items}, {"pushed", replay_[i].pushed()}};
    q.push_back(std::move(entry));
  }
  doc["q_learning"] = std::move(q);
  return doc;
}

void Trainer::restore(const json &doc) {
  try {
    if (doc.at("format") != "ma2c-checkpoint" || doc.at("version") != 1)
      throw ConfigError("unsupported checkpoint document");
    const std::string digest = doc.at("config_digest").get<std::string>();
    if (digest != config_.digest())
      throw ConfigError("checkpoint config digest " + digest + " does not match the run config digest " +
                        config_.digest());
    global_step_ = doc.at("global_step");
    episode_ = doc.at("episode");
    episode_step_ = doc.at("episode_step");
    updates_ = doc.at("updates");
    skipped_updates_ = doc.at("skipped_updates");
    fresh_episode_ = doc.at("fresh_episode");
    episode_rewards_ = doc.at("episode_rewards").get<std::vector<double>>();
    const json &st = doc.at("stats");
    stats_ = {st.at(0), st.at(1), st.at(2), st.at(3), st.at(4)};
    policy_rng_.restore(doc.at("policy_rng"));
    replay_rng_.restore(doc.at("replay_rng"));
    env_.load_state(doc.at("env"));
    obs_ = env_.observe();
    last_policies_ = doc.at("last_policies").get<std::vector<std::vector<double>>>();

    const json &agents = doc.at("actor_critic");
    if (agents.size() != actors_.size()) throw ConfigError("checkpoint actor-critic agent count mismatch");
    actor_rec_.clear();
    critic_rec_.clear();
    for (AgentId i = 0; i < actors_.size(); ++i) {
      const json &a = agents[i];
      actors_[i] = nn::Network::from_json(a.at("actor"));
      critics_[i] = nn::Network::from_json(a.at("critic"));
      if (!a.at("actor_rec").is_null()) {
        actor_rec_.push_back(rec_from_json(a.at("actor_rec")));
        critic_rec_.push_back(rec_from_json(a.at("critic_rec")));
      }
      const json &jb = a.at("batch");
      Batch &b = batches_[i];
      b.clear();
      for (const json &in : jb.at("inputs")) b.inputs.push_back(in.get<nn::StepInput>());
      b.actions = jb.at("actions").get<std::vector<std::size_t>>();
      b.rewards = jb.at("rewards").get<std::vector<double>>();
      for (int r : jb.at("resets").get<std::vector<int>>()) b.resets.push_back(static_cast<char>(r));
      for (int e : jb.at("ends").get<std::vector<int>>()) b.ends.push_back(static_cast<char>(e));
      b.steps = jb.at("steps").get<std::vector<std::int64_t>>();
      b.actor_rec0 = rec_from_json(jb.at("actor_rec0"));
      b.critic_rec0 = rec_from_json(jb.at("critic_rec0"));
    }

    const json &q = doc.at("q_learning");
    if (q.size() != replay_.size()) throw ConfigError("checkpoint Q-learning agent count mismatch");
    for (AgentId i = 0; i < replay_.size(); ++i) {
      const json &e = q[i];
      if (!linear_q_.empty()) {
        linear_q_[i].theta = e.at("theta").get<std::vector<double>>();
        linear_q_target_[i].theta = e.at("theta_target").get<std::vector<double>>();
      } else {
        deep_q_[i] = nn::Network::from_json(e.at("net"));
        deep_q_target_[i] = nn::Network::from_json(e.at("target"));
      }
      std::vector<ReplayTuple> items;
      for (const json &t : e.at("replay").at("items"))
        items.push_back({t.at(0).get<std::vector<double>>(), t.at(1).get<std::size_t>(), t.at(2).get<double>(),
                         t.at(3).get<std::vector<double>>(), t.at(4).get<bool>(), t.at(5).get<std::uint64_t>()});
      replay_[i].restore(std::move(items), e.at("replay").at("pushed").get<std::uint64_t>());
    }
  } catch (const json::exception &e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

std::unique_ptr<Controller> Trainer::make_controller(bool sample, std::uint64_t seed) const {
  switch (config_.agent) {
  case AgentKind::MA2C:
  case AgentKind::IA2C:
    return std::make_unique<ActorController>(*encoder_, actors_, sample, seed);
  case AgentKind::IQL_LR:
  case AgentKind::IQL_DNN:
    return std::make_unique<QController>(*encoder_, linear_q_, deep_q_);
  case AgentKind::GREEDY:
    return std::make_unique<GreedyController>(*encoder_);
  case AgentKind::RANDOM:
    return std::make_unique<RandomController>(*encoder_, seed);
  case AgentKind::FIXED_TIME:
    return std::make_unique<FixedTimeController>(*encoder_, kFixedTimeHold);
  }
  throw ContractError("unknown agent kind");
}

} // namespace ma2c::rl
