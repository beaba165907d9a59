#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ma2c/error.hpp"
#include "ma2c/nn/network.hpp"
#include "ma2c/rl/core.hpp"
#include "support.hpp"

using namespace ma2c;
using namespace ma2c::rl;

TEST_CASE("spatial discount on a three-agent chain") {
  const std::vector<std::pair<AgentId, AgentId>> edges{{0, 1}, {1, 2}};
  const auto g = AgentNetwork::build(3, edges);
  const std::vector<double> r{1, 2, 4};
  CHECK(spatial_discount_reward(g, r, 0, 0.5) == 3.0);
  CHECK(spatial_discount_reward(g, r, 1, 0.5) == 4.5);
  for (AgentId i = 0; i < 3; ++i) {
    CHECK(spatial_discount_reward(g, r, i, 0.0) == r[i]);
    CHECK(spatial_discount_reward(g, r, i, 1.0) == 7.0);
  }
  const std::vector<double> short_r{1, 2};
  CHECK_THROWS_AS(spatial_discount_reward(g, short_r, 0, 0.5), ContractError);
}

TEST_CASE("property: spatial discount matches a per-distance oracle") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    const auto edges = testing::random_edges(rng, n, rng.uniform());
    const auto g = AgentNetwork::build(n, edges);
    std::vector<double> r(n);
    for (double &x : r) x = -static_cast<double>(rng.below(200)); // integers: summation order is immaterial
    const double alpha = std::vector<double>{0.0, 0.5, 0.75, 1.0}[rng.below(4)];
    for (AgentId i = 0; i < n; ++i) {
      const auto d = testing::bfs_hops(n, edges, i);
      double expected = 0.0;
      for (std::size_t hop = 0; hop < n; ++hop) {
        double ring = 0.0;
        for (AgentId j = 0; j < n; ++j)
          if (d[j] == hop) ring += r[j];
        expected += std::pow(alpha, static_cast<double>(hop)) * ring;
      }
      REQUIRE(spatial_discount_reward(g, r, i, alpha) == expected);
    }
  }
}

TEST_CASE("neighbor state discounting") {
  std::vector<double> s{1.0, 1.0, 0.8, 0.4, 2.0};
  const std::vector<std::size_t> blocks{2, 2, 1};
  auto t = s;
  discount_neighbor_state(t, blocks, 0.75);
  CHECK(t[0] == 1.0);
  CHECK(t[1] == 1.0);
  CHECK(t[2] == doctest::Approx(0.6));
  CHECK(t[4] == 1.5);
  t = s;
  discount_neighbor_state(t, blocks, 1.0);
  CHECK(t == s);
  discount_neighbor_state(t, blocks, 0.0);
  CHECK(t == std::vector<double>{1.0, 1.0, 0.0, 0.0, 0.0});
  const std::vector<std::size_t> too_long{3, 3};
  CHECK_THROWS_AS(discount_neighbor_state(t, too_long, 0.5), ContractError);
}

TEST_CASE("return estimation examples") {
  const std::vector<std::int64_t> steps{0, 1};
  const std::vector<double> r{1, 2};
  const std::vector<char> end_at_last{0, 1}, open{0, 0};
  CHECK(estimate_returns(steps, r, end_at_last, 123.0, 0.5) == std::vector<double>{2.0, 2.0});
  const auto boot = estimate_returns(steps, r, open, 4.0, 0.5);
  CHECK(boot[0] == 3.0);
  CHECK(boot[1] == 4.0);
  CHECK(estimate_returns(steps, r, open, 4.0, 0.0) == r);
  const std::vector<std::int64_t> unordered{0, 2};
  CHECK_THROWS_AS(estimate_returns(unordered, r, open, 0.0, 0.5), ContractError);
  const std::vector<std::int64_t> across_reset{5, 0};
  const std::vector<char> both_end{1, 1};
  CHECK(estimate_returns(across_reset, r, both_end, 0.0, 0.5) == r);
  CHECK_THROWS_AS(estimate_returns(across_reset, r, end_at_last, 0.0, 0.5), ContractError);
}

TEST_CASE("property: returns equal direct discounted sums") {
  Rng rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    const double gamma = rng.uniform();
    const double bootstrap = rng.normal() * 5.0;
    std::vector<double> r(n);
    std::vector<char> ends(n, 0);
    std::vector<std::int64_t> steps(n);
    for (std::size_t t = 0; t < n; ++t) {
      r[t] = rng.normal();
      ends[t] = rng.uniform() < 0.2 ? 1 : 0;
      steps[t] = t == 0 ? 0 : (ends[t - 1] ? 0 : steps[t - 1] + 1);
    }
    const auto R = estimate_returns(steps, r, ends, bootstrap, gamma);
    for (std::size_t t = 0; t < n; ++t) {
      double expected = 0.0, w = 1.0;
      std::size_t tau = t;
      for (; tau < n; ++tau) {
        expected += w * r[tau];
        w *= gamma;
        if (ends[tau]) break;
      }
      if (tau == n) expected += w * bootstrap;
      REQUIRE(std::abs(R[t] - expected) <= 1e-10);
    }
  }
}

TEST_CASE("policy loss values") {
  const std::vector<std::vector<double>> uniform2{{0.0, 0.0}};
  const std::vector<std::size_t> a{0};
  const std::vector<double> zero{0.0};
  const PolicyLoss l = policy_loss(uniform2, a, zero, 0.01);
  CHECK(l.loss == doctest::Approx(-0.01 * std::log(2.0)));
  CHECK(l.loss == doctest::Approx(-0.00693).epsilon(1e-3));
  CHECK(l.entropy == doctest::Approx(std::log(2.0)));
  const std::vector<std::vector<double>> logits{{0.3, -1.0, 2.0}, {1.0, 1.0, 0.0}};
  const std::vector<std::size_t> acts{2, 0};
  const std::vector<double> none{0.0, 0.0};
  const PolicyLoss only_entropy = policy_loss(logits, acts, none, 0.2);
  const double h = 0.5 * (entropy(nn::softmax(logits[0])) + entropy(nn::softmax(logits[1])));
  CHECK(only_entropy.loss == doctest::Approx(-0.2 * h));
}

TEST_CASE("policy loss gradient matches finite differences") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(5), k = 2 + rng.below(4);
    std::vector<std::vector<double>> z(n, std::vector<double>(k));
    std::vector<std::size_t> acts(n);
    std::vector<double> adv(n);
    for (std::size_t t = 0; t < n; ++t) {
      for (double &x : z[t]) x = rng.normal();
      acts[t] = rng.below(k);
      adv[t] = rng.normal();
    }
    const double beta = rng.uniform() * 0.1;
    const PolicyLoss l = policy_loss(z, acts, adv, beta);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < k; ++j) {
        auto up = z, down = z;
        up[t][j] += 1e-6;
        down[t][j] -= 1e-6;
        const double fd = (policy_loss(up, acts, adv, beta).loss - policy_loss(down, acts, adv, beta).loss) / 2e-6;
        REQUIRE(std::abs(fd - l.d_logits[t][j]) <= 1e-7);
      }
  }
}

TEST_CASE("value loss") {
  const std::vector<double> v{1.0, 2.0}, r{1.0, 2.0}, r2{3.0, 2.0};
  CHECK(value_loss(v, r).loss == 0.0);
  const ValueLoss l = value_loss(v, r2);
  CHECK(l.loss == doctest::Approx(0.5 * 4.0 / 2.0));
  CHECK(l.d_values[0][0] == doctest::Approx(-1.0));
  CHECK(l.d_values[1][0] == 0.0);
}

TEST_CASE("property: the uniform policy maximizes entropy") {
  Rng rng(51);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + rng.below(6);
    std::vector<double> p(k);
    for (double &x : p) x = rng.uniform() + 1e-3;
    const double sum = std::accumulate(p.begin(), p.end(), 0.0);
    for (double &x : p) x /= sum;
    const std::vector<double> u(k, 1.0 / static_cast<double>(k));
    REQUIRE(entropy(p) < entropy(u));
  }
}

TEST_CASE("property: one actor step on a positive advantage raises pi(u)") {
  Rng rng(61);
  for (int trial = 0; trial < 20; ++trial) {
    nn::LayerSpec spec;
    spec.groups = {{"wave", 4, 8}, {"wait", 4, 4}, {"fingerprint", 0, 4}};
    spec.core_hidden = 6;
    spec.head_dim = 5;
    nn::Network actor(spec, rng);
    std::vector<nn::StepInput> in(1);
    in[0] = {std::vector<double>(4), std::vector<double>(4), {}};
    for (double &x : in[0][0]) x = rng.uniform();
    for (double &x : in[0][1]) x = rng.uniform();
    const std::vector<char> resets{1};
    const std::size_t u = rng.below(5);
    auto before = nn::softmax(actor.forward_sequence(in, resets, actor.initial_state()).steps[0].head);
    const auto cache = actor.forward_sequence(in, resets, actor.initial_state());
    const std::vector<std::vector<double>> logits{cache.steps[0].head};
    const std::vector<std::size_t> acts{u};
    const std::vector<double> adv{1.0};
    const PolicyLoss l = policy_loss(logits, acts, adv, 0.0);
    auto grads = actor.backward(cache, l.d_logits);
    nn::rmsprop_update(actor.params(), grads, 1e-4);
    const auto after = nn::softmax(actor.forward_sequence(in, resets, actor.initial_state()).steps[0].head);
    REQUIRE(after[u] > before[u]);
  }
}

TEST_CASE("Q-learning targets") {
  CHECK(iql_target(1.0, 2.0, 0.99, false) == doctest::Approx(2.98));
  CHECK(iql_target(1.0, 2.0, 0.0, false) == 1.0);
  CHECK(iql_target(1.0, 2.0, 0.99, true) == 1.0);
}

TEST_CASE("inverse-CDF sampling") {
  const std::vector<double> p{0.0, 0.5, 0.5};
  CHECK(sample_categorical(p, 0.0) == 1);
  CHECK(sample_categorical(p, 0.49) == 1);
  CHECK(sample_categorical(p, 0.5) == 2);
  CHECK(sample_categorical(p, 1.0) == 2);
  const std::vector<double> none{0.0, 0.0};
  CHECK_THROWS_AS(sample_categorical(none, 0.3), ContractError);
  Rng rng(71);
  const std::vector<double> q{0.2, 0.3, 0.5};
  std::vector<int> counts(3, 0);
  for (int k = 0; k < 30000; ++k) ++counts[sample_categorical(q, rng.uniform())];
  for (std::size_t j = 0; j < 3; ++j) CHECK(counts[j] / 30000.0 == doctest::Approx(q[j]).epsilon(0.05));
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  const std::vector<double> v{1.0, 3.0, 3.0};
  CHECK(argmax(v) == 1);
  CHECK_THROWS_AS(argmax(std::vector<double>{}), ContractError);
}

TEST_CASE("epsilon schedule") {
  const EpsilonSchedule e{1.0, 0.01, 500000.0};
  CHECK(e.value(0) == 1.0);
  CHECK(e.value(250000) == doctest::Approx(0.505));
  CHECK(e.value(500000) == doctest::Approx(0.01));
  CHECK(e.value(900000) == doctest::Approx(0.01));
  double last = 2.0;
  for (std::uint64_t s = 0; s <= 600000; s += 12345) {
    REQUIRE(e.value(s) <= last);
    last = e.value(s);
  }
}

TEST_CASE("replay buffer keeps a sliding window") {
  ReplayBuffer buf(10);
  Rng rng(81);
  for (std::uint64_t k = 0; k < 57; ++k) {
    buf.push({{static_cast<double>(k)}, 0, 0.0, {}, false, 0});
    REQUIRE(buf.size() == std::min<std::size_t>(k + 1, 10));
    for (const ReplayTuple *t : buf.sample(20, rng)) {
      REQUIRE(t->index + 10 > k);
      REQUIRE(t->index <= k);
      REQUIRE(t->state[0] == static_cast<double>(t->index));
    }
  }
  CHECK(buf.pushed() == 57);
  ReplayBuffer copy(10);
  copy.restore(buf.items(), buf.pushed());
  copy.push({{57.0}, 0, 0.0, {}, false, 0});
  buf.push({{57.0}, 0, 0.0, {}, false, 0});
  for (std::size_t k = 0; k < 10; ++k) CHECK(copy.items()[k].index == buf.items()[k].index);
  CHECK_THROWS_AS(ReplayBuffer(0), ConfigError);
  ReplayBuffer empty(3);
  CHECK_THROWS_AS(empty.sample(1, rng), ContractError);
}

TEST_CASE("replay sampling is uniform with replacement") {
  ReplayBuffer buf(4);
  for (int k = 0; k < 4; ++k) buf.push({{}, 0, 0.0, {}, false, 0});
  Rng rng(91);
  std::vector<int> counts(4, 0);
  for (const ReplayTuple *t : buf.sample(40000, rng)) ++counts[t->index];
  for (int c : counts) CHECK(c / 40000.0 == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("greedy phase choice") {
  // Five phases over five lanes; phase p serves lane p only.
  const std::vector<std::vector<std::size_t>> single{{0}, {1}, {2}, {3}, {4}};
  CHECK(greedy_action(std::vector<double>(5, 0.0), single) == 0);
  CHECK(greedy_action(std::vector<double>{3, 7, 7, 2, 1}, single) == 1);
  CHECK(greedy_action(std::vector<double>{0, 0, 0, 4, 0}, single) == 3);
  const std::vector<std::vector<std::size_t>> shared{{0, 1}, {1, 2}};
  CHECK(greedy_action(std::vector<double>{1, 1, 3}, shared) == 1);
}

TEST_CASE("property: greedy choice is invariant to positive scaling") {
  Rng rng(101);
  const std::vector<std::vector<std::size_t>> phases{{0, 1}, {2}, {3, 4, 5}, {0, 5}, {1, 2, 3}};
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> wave(6);
    for (double &x : wave) x = static_cast<double>(rng.below(6));
    const double c = static_cast<double>(1 + rng.below(50)); // keeps phase sums exact
    std::vector<double> scaled = wave;
    for (double &x : scaled) x *= c;
    REQUIRE(greedy_action(wave, phases) == greedy_action(scaled, phases));
  }
}
