#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ma2c/agent_graph.hpp"

namespace ma2c::sim {

enum class NodeKind { Intersection, Terminal };

struct Node {
  NodeKind kind = NodeKind::Intersection;
  std::string name;
  double x = 0.0;
  double y = 0.0;
};

/// Directed road link. Storage capacity is per lane.
struct Link {
  std::size_t from = 0;
  std::size_t to = 0;
  double length = 200.0; // m
  int lanes = 1;
  double speed = 20.0; // m/s
};

struct Movement {
  std::size_t in_link = 0;
  int lane = 0;
  std::size_t out_link = 0;
};

/// A signalized intersection, i.e. one agent. Phases index into movements.
struct Intersection {
  std::size_t node = 0;
  std::vector<Movement> movements;
  std::vector<std::vector<std::size_t>> phases;
};

struct RatePiece {
  double start = 0.0; // s, inclusive
  double end = 0.0;   // s, exclusive
  double rate = 0.0;  // veh/hr per origin terminal
};

/// Demand group. Every origin terminal of the group emits vehicles at the
/// profile rate; each vehicle draws its destination uniformly from the group.
struct FlowGroup {
  std::string name;
  std::vector<std::size_t> origins;
  std::vector<std::size_t> destinations;
  std::vector<RatePiece> profile;

  double rate_at(double t) const;
};

struct SimParams {
  double saturation_flow = 0.5; // veh/s/lane
  double vehicle_space = 7.5;   // m
  double detection_range = 50.0; // m, wave detector reach
};

/// Static description of a traffic environment. Agent i controls
/// intersections[i].
struct Scenario {
  std::vector<Node> nodes;
  std::vector<Link> links;
  std::vector<Intersection> intersections;
  std::vector<FlowGroup> flows;
  std::vector<std::pair<AgentId, AgentId>> agent_edges;
  SimParams params;
  double duration = 3600.0; // s covered by the flow profiles

  /// Throws ConfigError describing the first violated invariant.
  void validate() const;

  AgentNetwork agent_network() const { return AgentNetwork::build(intersections.size(), agent_edges); }

  int lane_capacity(std::size_t link) const;

  /// Incoming (link, lane) pairs of an intersection in ascending link/lane order.
  std::vector<std::pair<std::size_t, int>> incoming_lanes(AgentId agent) const;

  /// Expected number of vehicle requests over [0, duration): closed-form
  /// integral of every group's piecewise-constant profile.
  double expected_demand() const;
};

struct GridParams {
  std::size_t n = 5;
  double link_length = 200.0;
  int arterial_lanes = 2;
  double arterial_speed = 20.0;
  int avenue_lanes = 1;
  double avenue_speed = 11.0;
  double major_peak = 1100.0; // veh/hr per origin terminal
  double minor_peak = 300.0;
  double duration = 3600.0;
  SimParams sim;
};

/// n x n lattice, E-W arterials and N-S avenues, five phases per
/// intersection and the four time-variant flow groups F1, f1, F2, f2.
Scenario build_grid_scenario(const GridParams &params);

nlohmann::json scenario_to_json(const Scenario &scenario);
Scenario scenario_from_json(const nlohmann::json &doc);
Scenario load_scenario(const std::filesystem::path &path);
void save_scenario(const Scenario &scenario, const std::filesystem::path &path);

} // namespace ma2c::sim
