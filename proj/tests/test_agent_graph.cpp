#include <doctest.h>

#include "ma2c/agent_graph.hpp"
#include "ma2c/error.hpp"
#include "support.hpp"

using namespace ma2c;

TEST_CASE("chain graph distances and regions") {
  const std::vector<std::pair<AgentId, AgentId>> edges{{0, 1}, {1, 2}};
  const auto g = AgentNetwork::build(3, edges);
  CHECK(g.distance(0, 2) == 2);
  CHECK(g.distance(2, 0) == 2);
  CHECK(g.distance(1, 1) == 0);
  CHECK(g.local_region(1) == std::vector<AgentId>{1, 0, 2});
  CHECK(g.local_region(2) == std::vector<AgentId>{2, 1});
  CHECK(g.max_distance(0) == 2);
  CHECK(g.max_distance(1) == 1);
}

TEST_CASE("edges are deduplicated in either orientation") {
  const std::vector<std::pair<AgentId, AgentId>> edges{{0, 1}, {1, 0}, {0, 1}};
  const auto g = AgentNetwork::build(2, edges);
  CHECK(g.edges().size() == 1);
  CHECK(g.neighbors(0) == std::vector<AgentId>{1});
}

TEST_CASE("invalid edges are rejected") {
  const std::vector<std::pair<AgentId, AgentId>> unknown{{0, 5}};
  const std::vector<std::pair<AgentId, AgentId>> loop{{1, 1}};
  CHECK_THROWS_AS(AgentNetwork::build(3, unknown), ConfigError);
  CHECK_THROWS_AS(AgentNetwork::build(3, loop), ConfigError);
}

TEST_CASE("disconnected agents are unreachable") {
  const std::vector<std::pair<AgentId, AgentId>> edges{{0, 1}};
  const auto g = AgentNetwork::build(3, edges);
  CHECK(g.distance(0, 2) == kUnreachable);
  CHECK(g.max_distance(2) == 0);
}

TEST_CASE("grid edges give lattice degrees") {
  const auto e = grid_edges(5);
  CHECK(e.size() == 40);
  const auto g = AgentNetwork::build(25, e);
  CHECK(g.neighbors(0).size() == 2);
  CHECK(g.neighbors(2).size() == 3);
  CHECK(g.neighbors(12).size() == 4);
  CHECK(g.distance(0, 24) == 8);
}

TEST_CASE("property: distances match an independent BFS on random graphs") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    const auto edges = testing::random_edges(rng, n, rng.uniform());
    const auto g = AgentNetwork::build(n, edges);
    for (AgentId i = 0; i < n; ++i) {
      const auto oracle = testing::bfs_hops(n, edges, i);
      for (AgentId j = 0; j < n; ++j) {
        const Hops expected = oracle[j] == std::numeric_limits<std::size_t>::max() ? kUnreachable : oracle[j];
        REQUIRE(g.distance(i, j) == expected);
        REQUIRE(g.distance(i, j) == g.distance(j, i));
      }
      const auto region = g.local_region(i);
      REQUIRE(region.front() == i);
      for (std::size_t k = 2; k < region.size(); ++k) REQUIRE(region[k - 1] < region[k]);
    }
  }
}
