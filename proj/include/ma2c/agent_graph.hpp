#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace ma2c {

using AgentId = std::size_t;

/// Hop count between two agents; kUnreachable marks disconnected pairs.
using Hops = std::size_t;
inline constexpr Hops kUnreachable = std::numeric_limits<Hops>::max();

/// Undirected multi-agent graph with precomputed hop distances.
///
/// Neighbor lists are sorted ascending, and local regions are ordered
/// "self first, then neighbors ascending". That ordering fixes the layout of
/// every concatenated state and fingerprint vector downstream. Immutable after
/// construction.
class AgentNetwork {
public:
  AgentNetwork() = default;

  /// Throws ConfigError for an edge naming an unknown id or a self-loop.
  /// Duplicate edges (in either orientation) are ignored.
  static AgentNetwork build(std::size_t n_agents,
                            std::span<const std::pair<AgentId, AgentId>> edges);

  std::size_t size() const { return adjacency_.size(); }

  const std::vector<AgentId> &neighbors(AgentId i) const { return adjacency_.at(i); }

  /// V_i: {i} followed by the sorted neighbors of i.
  std::vector<AgentId> local_region(AgentId i) const;

  Hops distance(AgentId i, AgentId j) const;

  /// Largest finite distance from i (0 for an isolated agent).
  Hops max_distance(AgentId i) const { return max_dist_.at(i); }

  /// Sorted, deduplicated (low, high) pairs.
  const std::vector<std::pair<AgentId, AgentId>> &edges() const { return edges_; }

private:
  std::vector<std::vector<AgentId>> adjacency_;
  std::vector<std::pair<AgentId, AgentId>> edges_;
  std::vector<Hops> dist_; // row-major size() x size()
  std::vector<Hops> max_dist_;
};

/// Edges of an n x n lattice with row-major agent ids.
std::vector<std::pair<AgentId, AgentId>> grid_edges(std::size_t n);

} // namespace ma2c
