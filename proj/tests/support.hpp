#pragma once

#include <cstddef>
#include <limits>
#include <memory>
#include <queue>
#include <utility>
#include <vector>

#include "ma2c/agent_graph.hpp"
#include "ma2c/config.hpp"
#include "ma2c/rng.hpp"
#include "ma2c/scenario.hpp"

namespace testing {

using ma2c::AgentId;

/// Terminal 0 -> intersection 1 -> terminal 2. Phase 0 serves the through
/// movement, phase 1 is all red. No demand unless `rate` > 0.
inline ma2c::sim::Scenario corridor(double length = 200.0, double speed = 20.0, double rate = 0.0,
                                    double duration = 3600.0) {
  using namespace ma2c::sim;
  Scenario s;
  s.nodes = {{NodeKind::Terminal, "A", 0, 0}, {NodeKind::Intersection, "X", length, 0},
             {NodeKind::Terminal, "B", 2 * length, 0}};
  s.links = {{0, 1, length, 1, speed}, {1, 2, length, 1, speed}};
  Intersection x;
  x.node = 1;
  x.movements = {{0, 0, 1}};
  x.phases = {{0}, {}};
  s.intersections = {x};
  s.duration = duration;
  if (rate > 0.0) s.flows = {{"through", {0}, {2}, {{0.0, duration, rate}}}};
  s.validate();
  return s;
}

/// Random undirected graph on n nodes with edge probability p.
inline std::vector<std::pair<AgentId, AgentId>> random_edges(ma2c::Rng &rng, std::size_t n, double p) {
  std::vector<std::pair<AgentId, AgentId>> edges;
  for (AgentId i = 0; i < n; ++i)
    for (AgentId j = i + 1; j < n; ++j)
      if (rng.uniform() < p) edges.emplace_back(i, j);
  return edges;
}

/// Independent hop-distance oracle: BFS over an adjacency matrix.
inline std::vector<std::size_t> bfs_hops(std::size_t n, const std::vector<std::pair<AgentId, AgentId>> &edges,
                                         AgentId src) {
  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
  for (auto [a, b] : edges) adj[a][b] = adj[b][a] = true;
  std::vector<std::size_t> dist(n, std::numeric_limits<std::size_t>::max());
  std::queue<AgentId> open;
  dist[src] = 0;
  open.push(src);
  while (!open.empty()) {
    const AgentId u = open.front();
    open.pop();
    for (AgentId v = 0; v < n; ++v)
      if (adj[u][v] && dist[v] == std::numeric_limits<std::size_t>::max()) {
        dist[v] = dist[u] + 1;
        open.push(v);
      }
  }
  return dist;
}

/// A small, fast configuration for loop-level tests.
inline ma2c::RunConfig tiny_config(ma2c::AgentKind kind, std::size_t grid_n = 2) {
  ma2c::RunConfig c;
  c.agent = kind;
  c.grid.n = grid_n;
  c.layers = {8, 4, 4, 8};
  c.batch_size = 20;
  c.episode_length = 50;
  c.total_steps = 200;
  return c;
}

} // namespace testing
