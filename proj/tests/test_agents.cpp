#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ma2c/harness.hpp"
#include "ma2c/rl/agents.hpp"
#include "ma2c/rl/core.hpp"
#include "ma2c/traffic_sim.hpp"
#include "support.hpp"

using namespace ma2c;

namespace {

struct Fixture {
  RunConfig config;
  std::shared_ptr<const sim::Scenario> scenario;
  sim::TrafficSim env;
  explicit Fixture(RunConfig c)
      : config(c), scenario(harness::make_scenario(c)), env(scenario, {c.delta_t, c.yellow_time, c.reward_coef}) {}
};

/// Drives the grid with random phases for a while so the state is non-trivial.
sim::Observation busy(sim::TrafficSim &env, std::uint64_t seed, int steps) {
  env.reset(seed);
  Rng rng(seed);
  sim::Observation obs;
  for (int t = 0; t < steps; ++t) {
    std::vector<std::size_t> a(env.n_agents());
    for (AgentId i = 0; i < a.size(); ++i) a[i] = rng.below(env.scenario().intersections[i].phases.size());
    obs = env.step(a).obs;
  }
  return obs;
}

} // namespace

TEST_CASE("encoder layout on the 5x5 grid") {
  RunConfig c;
  Fixture f(c);
  rl::Encoder enc(f.env, c);
  REQUIRE(enc.size() == 25);
  const auto &corner = enc.layout(0);
  CHECK(corner.region.size() == 3);
  CHECK(corner.region[0] == 0);
  CHECK(corner.state_dim == 18);
  CHECK(corner.neighbors.size() == 2);
  CHECK(corner.n_actions == 5);
  CHECK(corner.fingerprint_dim == 10);
  const auto &center = enc.layout(12);
  CHECK(center.region.size() == 5);
  CHECK(center.state_dim == 30);
  CHECK(center.fingerprint_dim == 20);
  for (AgentId i = 0; i < enc.size(); ++i)
    CHECK(std::accumulate(enc.layout(i).lane_blocks.begin(), enc.layout(i).lane_blocks.end(), std::size_t{0}) ==
          enc.layout(i).state_dim);
  const auto spec = enc.actor_spec(12);
  CHECK(spec.head_dim == 5);
  CHECK(spec.core_hidden == 64);
  CHECK(enc.critic_spec(12).head_dim == 1);

  RunConfig ia = c;
  ia.agent = AgentKind::IA2C;
  rl::Encoder plain(f.env, ia);
  CHECK(plain.layout(12).fingerprint_dim == 0);
}

TEST_CASE("encoding normalizes, clips and discounts neighbor blocks") {
  RunConfig c;
  c.grid.n = 3;
  c.episode_length = 100;
  Fixture f(c);
  const auto obs = busy(f.env, 5, 60);
  rl::Encoder ma(f.env, c);
  RunConfig ic = c;
  ic.agent = AgentKind::IA2C;
  rl::Encoder ia(f.env, ic);
  const auto fp = ma.uniform_policies();
  for (AgentId i = 0; i < ma.size(); ++i) {
    const auto in_ma = ma.encode(i, obs, fp);
    const auto in_ia = ia.encode(i, obs, fp);
    const auto &lay = ma.layout(i);
    REQUIRE(in_ma[0].size() == lay.state_dim);
    REQUIRE(in_ia[2].empty());
    REQUIRE(in_ma[2].size() == lay.fingerprint_dim);
    std::size_t pos = 0;
    for (std::size_t b = 0; b < lay.region.size(); ++b) {
      const auto &lanes = f.env.agent_lanes(lay.region[b]);
      const double w = b == 0 ? 1.0 : c.alpha;
      for (std::size_t k = 0; k < lay.lane_blocks[b]; ++k, ++pos) {
        const double wave = std::min(obs.wave[lay.region[b]][k] / c.norm_wave, c.state_clip);
        const double wait = std::min(obs.wait[lay.region[b]][k] / c.norm_wait, c.state_clip);
        REQUIRE(in_ia[0][pos] == wave);
        REQUIRE(in_ia[1][pos] == wait);
        REQUIRE(in_ma[0][pos] == doctest::Approx(w * wave));
        REQUIRE(in_ma[1][pos] == doctest::Approx(w * wait));
        REQUIRE(in_ia[0][pos] >= 0.0);
        REQUIRE(in_ia[0][pos] <= c.state_clip);
      }
      REQUIRE(lanes.size() == lay.lane_blocks[b]);
    }
    const auto phi = ma.features(i, obs);
    REQUIRE(phi.size() == 2 * lay.state_dim);
    for (std::size_t k = 0; k < lay.state_dim; ++k) REQUIRE(phi[k] == in_ia[0][k]);
  }
}

TEST_CASE("reward shaping") {
  RunConfig c;
  c.grid.n = 3;
  Fixture f(c);
  rl::Encoder ma(f.env, c);
  RunConfig ic = c;
  ic.agent = AgentKind::IA2C;
  rl::Encoder ia(f.env, ic);
  std::vector<double> raw(9);
  for (std::size_t i = 0; i < 9; ++i) raw[i] = -100.0 * static_cast<double>(i);
  const auto shaped = ma.shape_rewards(raw);
  const auto global = ia.shape_rewards(raw);
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  for (AgentId i = 0; i < 9; ++i) {
    const double expected = rl::spatial_discount_reward(ma.graph(), raw, i, c.alpha) / c.norm_reward;
    CHECK(shaped[i] == doctest::Approx(std::max(expected, -c.reward_clip)));
    CHECK(global[i] == doctest::Approx(std::max(total / c.norm_reward, -c.reward_clip)));
  }
  const std::vector<double> huge(9, -1e7);
  for (double r : ma.shape_rewards(huge)) CHECK(r == -c.reward_clip);
}

TEST_CASE("with alpha = 1 the spatial reward and state match the independent learner") {
  RunConfig c;
  c.grid.n = 3;
  c.alpha = 1.0;
  c.episode_length = 100;
  Fixture f(c);
  const auto obs = busy(f.env, 9, 40);
  rl::Encoder ma(f.env, c);
  RunConfig ic = c;
  ic.agent = AgentKind::IA2C;
  rl::Encoder ia(f.env, ic);
  std::vector<double> raw(9);
  for (std::size_t i = 0; i < 9; ++i) raw[i] = -static_cast<double>(3 * i + 1);
  CHECK(ma.shape_rewards(raw) == ia.shape_rewards(raw));
  const auto fp = ma.uniform_policies();
  for (AgentId i = 0; i < 9; ++i) {
    CHECK(ma.encode(i, obs, fp)[0] == ia.encode(i, obs, fp)[0]);
    CHECK(ma.encode(i, obs, fp)[1] == ia.encode(i, obs, fp)[1]);
  }
}

TEST_CASE("baseline controllers") {
  RunConfig c;
  c.grid.n = 3;
  c.episode_length = 100;
  Fixture f(c);
  rl::Encoder enc(f.env, c);
  const auto obs = busy(f.env, 3, 30);

  rl::GreedyController greedy(enc);
  const auto g = greedy.act(obs);
  for (AgentId i = 0; i < 9; ++i) {
    const auto &lay = enc.layout(i);
    std::vector<double> own(obs.wave[i].begin(), obs.wave[i].end());
    CHECK(g[i] == rl::greedy_action(own, lay.phase_lanes));
  }

  rl::FixedTimeController fixed(enc, 6);
  fixed.begin_episode();
  for (std::size_t t = 0; t < 40; ++t) {
    const auto a = fixed.act(obs);
    for (AgentId i = 0; i < 9; ++i) REQUIRE(a[i] == (t / 6) % enc.layout(i).n_actions);
  }

  rl::RandomController r1(enc, 4), r2(enc, 4);
  for (int t = 0; t < 20; ++t) {
    const auto a = r1.act(obs);
    REQUIRE(a == r2.act(obs));
    for (AgentId i = 0; i < 9; ++i) REQUIRE(a[i] < enc.layout(i).n_actions);
  }
}

TEST_CASE("linear Q values") {
  rl::LinearQ q{2, 3, {1, 0, 0, 0, 1, 2}};
  const std::vector<double> phi{1.0, 2.0, 3.0};
  CHECK(q.values(phi) == std::vector<double>{1.0, 8.0});
}

TEST_CASE("a fresh actor starts near the uniform policy") {
  RunConfig c;
  c.grid.n = 3;
  c.episode_length = 100;
  Fixture f(c);
  const auto obs = busy(f.env, 2, 50);
  rl::Encoder enc(f.env, c);
  Rng rng(12);
  const auto fp = enc.uniform_policies();
  for (AgentId i = 0; i < enc.size(); ++i) {
    nn::Network actor(enc.actor_spec(i), rng);
    auto rec = actor.initial_state();
    const auto p = actor.forward(enc.encode(i, obs, fp), rec);
    const double h = rl::entropy(p);
    CHECK(h > 0.99 * std::log(static_cast<double>(p.size())));
    CHECK(enc.critic_spec(i).head_gain == 1.0);
  }
}
