#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ma2c/rng.hpp"
#include "ma2c/scenario.hpp"

namespace ma2c::sim {

/// MDP interaction timing and the reward tradeoff coefficient.
struct MdpTiming {
  int delta_t = 5;          // s per decision step
  int yellow = 2;           // s of yellow after a phase switch
  double reward_coef = 0.2; // veh/s
};

struct Vehicle {
  std::uint32_t route = 0;   // index into the route table
  std::uint32_t hop = 0;     // position within the route
  std::int32_t lane = 0;     // lane on the current link
  std::int64_t spawn_time = 0;
  std::int64_t entry_time = 0; // entry to the current link
  std::int64_t queue_join = 0;
  bool queued = false;
  bool done = false;
};

struct LaneState {
  std::deque<std::uint32_t> moving; // FIFO by entry time
  std::deque<std::uint32_t> queue;  // head = front
  double credit = 0.0;              // saturation-flow discharge credit
};

struct SignalState {
  std::size_t phase = 0;
  std::size_t previous = 0;
  int yellow_left = 0;
  std::int64_t since_switch = 0; // s
};

struct PendingSpawn {
  std::uint32_t route = 0;
  std::int64_t request_time = 0;
};

struct SpawnRecord {
  std::int64_t time = 0;
  std::uint32_t origin = 0;
  std::uint32_t destination = 0;
  friend bool operator==(const SpawnRecord &, const SpawnRecord &) = default;
};

/// Complete mutable simulator state. Plain data so it can be checkpointed.
struct SimState {
  std::int64_t clock = 0;
  std::vector<Vehicle> vehicles;
  std::vector<LaneState> lanes; // flattened (link, lane)
  std::vector<SignalState> signals;
  std::vector<std::deque<PendingSpawn>> pending; // per origin link
  Rng rng;
  std::uint64_t spawned = 0;
  std::uint64_t completed = 0;
  std::uint64_t blocked_spawns = 0;
  double trip_delay_sum = 0.0;
  std::vector<double> trip_delays; // per completed trip, in completion order
  std::vector<SpawnRecord> spawn_log;

  std::uint64_t in_network() const;
};

/// Network-level measurements at one instant.
struct SimMetrics {
  double avg_queue = 0.0;               // veh per intersection
  std::optional<double> avg_delay;      // s/veh over queued vehicles
  std::optional<double> avg_speed;      // m/s over in-network vehicles
  std::uint64_t completed = 0;          // cumulative trips
  std::uint64_t accumulation = 0;       // vehicles in network
};

/// Per-agent raw (unnormalized) observations, one entry per incoming lane.
struct Observation {
  std::vector<std::vector<double>> wave;
  std::vector<std::vector<double>> wait;
  std::vector<std::vector<double>> queue;
};

struct StepResult {
  Observation obs;
  std::vector<double> rewards; // r_{t,i}, post-decision
  SimMetrics metrics;
  std::uint64_t completed_in_step = 0;
  std::vector<double> trip_delays_in_step;
};

/// Deterministic point-queue simulator: vehicles traverse a link at the
/// speed limit, then stack in a vertical FIFO queue at the stop line and
/// discharge at saturation flow while their movement is green.
class TrafficSim {
public:
  TrafficSim(std::shared_ptr<const Scenario> scenario, MdpTiming timing);

  /// Empty network, clock 0, every signal on phase 0.
  Observation reset(std::uint64_t seed);

  /// Applies one phase per agent for delta_t one-second ticks. Throws
  /// ContractError for a phase index outside the agent's table.
  StepResult step(std::span<const std::size_t> joint_action);

  /// Advances a single one-second tick under the current signal plan.
  void tick();

  std::size_t lane_index(std::size_t link, int lane) const { return lane_offset_.at(link) + static_cast<std::size_t>(lane); }

  double measure_wave(std::size_t lane) const;
  double measure_wait(std::size_t lane) const;
  double measure_queue(std::size_t lane) const;
  double local_reward(AgentId agent, double coef) const;
  SimMetrics snapshot_metrics() const;
  Observation observe() const;

  /// Test hook: when set, no movement ever discharges.
  void set_all_red(bool on) { all_red_ = on; }

  /// Inject a vehicle on the first link of the route between two terminals
  /// at the current clock, bypassing demand generation. Returns its id.
  std::uint32_t inject_vehicle(std::size_t origin, std::size_t destination);

  /// Free-flow duration (s) of the route between two terminals.
  double free_flow_time(std::size_t origin, std::size_t destination) const;

  /// Incoming lanes (flattened indices) per agent, in Scenario::incoming_lanes order.
  const std::vector<std::size_t> &agent_lanes(AgentId agent) const { return agent_lanes_.at(agent); }

  std::size_t n_agents() const { return scenario_->intersections.size(); }
  std::size_t n_phases(AgentId agent) const { return scenario_->intersections.at(agent).phases.size(); }
  const Scenario &scenario() const { return *scenario_; }
  const MdpTiming &timing() const { return timing_; }
  const SimState &state() const { return state_; }
  SimState &mutable_state() { return state_; }

  /// Vehicles whose current link is the given lane (moving + queued).
  std::size_t lane_occupancy(std::size_t lane) const;

  /// FNV-1a digest over the full state.
  std::uint64_t digest() const;

  /// Throws ContractError if a conservation or capacity invariant fails.
  void check_invariants() const;

  nlohmann::json save_state() const;
  void load_state(const nlohmann::json &doc);

private:
  struct Route {
    std::vector<std::size_t> links;
    double free_flow = 0.0;
    std::uint32_t origin = 0;
    std::uint32_t destination = 0;
  };

  void build_routes();
  std::optional<Route> shortest_route(std::size_t origin, std::size_t destination) const;
  std::uint32_t route_id(std::size_t origin, std::size_t destination) const;
  int choose_lane(const Route &route, std::uint32_t hop) const;
  bool is_green(std::size_t agent, std::size_t movement) const;
  void spawn_phase();
  void move_phase();
  void discharge_phase();

  std::shared_ptr<const Scenario> scenario_;
  MdpTiming timing_;
  std::vector<std::size_t> lane_offset_;
  std::vector<int> lane_capacity_; // per flattened lane
  std::vector<std::size_t> lane_link_;
  std::vector<std::vector<std::size_t>> agent_lanes_;
  std::vector<std::size_t> origin_link_;  // per node; SIZE_MAX if none
  std::vector<std::size_t> origin_slot_;  // per node; index into pending
  std::vector<std::size_t> origins_;      // terminal nodes with an entry link
  std::vector<Route> routes_;
  std::vector<std::uint32_t> route_table_; // node x node -> route id, UINT32_MAX if none
  // movement lookup: per flattened lane, (out_link, agent, movement index)
  struct LaneMove {
    std::size_t out_link;
    std::size_t movement;
  };
  std::vector<std::vector<LaneMove>> lane_moves_;
  std::vector<std::size_t> link_agent_; // agent at the downstream end, SIZE_MAX for exits
  SimState state_;
  std::vector<std::vector<std::vector<bool>>> phase_mask_; // agent, phase, movement
  bool all_red_ = false;
};

} // namespace ma2c::sim
