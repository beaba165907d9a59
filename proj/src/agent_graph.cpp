#include "ma2c/agent_graph.hpp"

#include <algorithm>
#include <deque>
#include <string>

#include "ma2c/error.hpp"

namespace ma2c {

AgentNetwork AgentNetwork::build(std::size_t n_agents,
                                 std::span<const std::pair<AgentId, AgentId>> edges) {
  AgentNetwork g;
  g.adjacency_.resize(n_agents);
  for (auto [a, b] : edges) {
    for (AgentId id : {a, b})
      if (id >= n_agents)
        throw ConfigError("agent edge references unknown agent id " + std::to_string(id) +
                          " (network has " + std::to_string(n_agents) + " agents)");
    if (a == b) throw ConfigError("agent edge is a self-loop on agent " + std::to_string(a));
    g.edges_.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(g.edges_.begin(), g.edges_.end());
  g.edges_.erase(std::unique(g.edges_.begin(), g.edges_.end()), g.edges_.end());
  for (auto [a, b] : g.edges_) {
    g.adjacency_[a].push_back(b);
    g.adjacency_[b].push_back(a);
  }
  for (auto &nbrs : g.adjacency_) std::sort(nbrs.begin(), nbrs.end());

  g.dist_.assign(n_agents * n_agents, kUnreachable);
  g.max_dist_.assign(n_agents, 0);
  std::deque<AgentId> frontier;
  for (AgentId src = 0; src < n_agents; ++src) {
    Hops *row = g.dist_.data() + src * n_agents;
    row[src] = 0;
    frontier.assign(1, src);
    while (!frontier.empty()) {
      const AgentId u = frontier.front();
      frontier.pop_front();
      for (AgentId v : g.adjacency_[u]) {
        if (row[v] != kUnreachable) continue;
        row[v] = row[u] + 1;
        g.max_dist_[src] = std::max(g.max_dist_[src], row[v]);
        frontier.push_back(v);
      }
    }
  }
  return g;
}

std::vector<AgentId> AgentNetwork::local_region(AgentId i) const {
  std::vector<AgentId> region{i};
  const auto &nbrs = adjacency_.at(i);
  region.insert(region.end(), nbrs.begin(), nbrs.end());
  return region;
}

Hops AgentNetwork::distance(AgentId i, AgentId j) const {
  if (i >= size() || j >= size())
    throw ContractError("distance query on unknown agent id");
  return dist_[i * size() + j];
}

std::vector<std::pair<AgentId, AgentId>> grid_edges(std::size_t n) {
  std::vector<std::pair<AgentId, AgentId>> edges;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const AgentId id = r * n + c;
      if (c + 1 < n) edges.emplace_back(id, id + 1);
      if (r + 1 < n) edges.emplace_back(id, id + n);
    }
  return edges;
}

} // namespace ma2c
