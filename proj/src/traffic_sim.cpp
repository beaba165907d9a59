#include "ma2c/traffic_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <queue>
#include <string>

#include "ma2c/error.hpp"

namespace ma2c::sim {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
constexpr std::uint32_t kNoRoute = std::numeric_limits<std::uint32_t>::max();

class Fnv1a {
public:
  template <class T> void add(const T &value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (unsigned char b : bytes) hash_ = (hash_ ^ b) * 0x100000001b3ULL;
  }
  void add(const std::string &s) {
    for (unsigned char b : s) hash_ = (hash_ ^ b) * 0x100000001b3ULL;
  }
  std::uint64_t value() const { return hash_; }

private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

} // namespace

std::uint64_t SimState::in_network() const {
  std::uint64_t n = 0;
  for (const auto &lane : lanes) n += lane.moving.size() + lane.queue.size();
  return n;
}

TrafficSim::TrafficSim(std::shared_ptr<const Scenario> scenario, MdpTiming timing)
    : scenario_(std::move(scenario)), timing_(timing) {
  if (!scenario_) throw ContractError("TrafficSim needs a scenario");
  if (timing_.delta_t < 1) throw ConfigError("delta_t must be >= 1 s");
  if (timing_.yellow < 0 || timing_.yellow >= timing_.delta_t)
    throw ConfigError("yellow time must satisfy 0 <= t_y < delta_t");
  scenario_->validate();
  const Scenario &s = *scenario_;

  lane_offset_.resize(s.links.size());
  std::size_t total = 0;
  for (std::size_t l = 0; l < s.links.size(); ++l) {
    lane_offset_[l] = total;
    for (int k = 0; k < s.links[l].lanes; ++k) {
      lane_capacity_.push_back(s.lane_capacity(l));
      lane_link_.push_back(l);
    }
    total += static_cast<std::size_t>(s.links[l].lanes);
  }

  link_agent_.assign(s.links.size(), kNone);
  std::vector<std::size_t> node_agent(s.nodes.size(), kNone);
  for (std::size_t a = 0; a < s.intersections.size(); ++a) node_agent[s.intersections[a].node] = a;
  for (std::size_t l = 0; l < s.links.size(); ++l) link_agent_[l] = node_agent[s.links[l].to];

  lane_moves_.resize(total);
  phase_mask_.resize(s.intersections.size());
  agent_lanes_.resize(s.intersections.size());
  for (std::size_t a = 0; a < s.intersections.size(); ++a) {
    const Intersection &x = s.intersections[a];
    for (std::size_t m = 0; m < x.movements.size(); ++m) {
      const Movement &mv = x.movements[m];
      lane_moves_[lane_index(mv.in_link, mv.lane)].push_back({mv.out_link, m});
    }
    for (const auto &phase : x.phases) {
      std::vector<bool> mask(x.movements.size(), false);
      for (std::size_t m : phase) mask[m] = true;
      phase_mask_[a].push_back(std::move(mask));
    }
    for (auto [link, lane] : s.incoming_lanes(a)) agent_lanes_[a].push_back(lane_index(link, lane));
  }

  origin_link_.assign(s.nodes.size(), kNone);
  origin_slot_.assign(s.nodes.size(), kNone);
  for (std::size_t l = 0; l < s.links.size(); ++l) {
    const std::size_t from = s.links[l].from;
    if (s.nodes[from].kind == NodeKind::Terminal && origin_link_[from] == kNone) {
      origin_link_[from] = l;
      origin_slot_[from] = origins_.size();
      origins_.push_back(from);
    }
  }
  build_routes();
  reset(0);
}

std::optional<TrafficSim::Route> TrafficSim::shortest_route(std::size_t origin, std::size_t destination) const {
  const Scenario &s = *scenario_;
  if (origin_link_.at(origin) == kNone) return std::nullopt;
  const std::size_t start = origin_link_[origin];
  std::vector<double> cost(s.links.size(), std::numeric_limits<double>::infinity());
  std::vector<std::size_t> prev(s.links.size(), kNone);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  cost[start] = s.links[start].length / s.links[start].speed;
  open.emplace(cost[start], start);
  std::size_t goal = kNone;
  while (!open.empty()) {
    auto [c, l] = open.top();
    open.pop();
    if (c > cost[l]) continue;
    if (s.links[l].to == destination) {
      goal = l;
      break;
    }
    const std::size_t agent = link_agent_[l];
    if (agent == kNone) continue; // ends at another terminal
    for (int k = 0; k < s.links[l].lanes; ++k)
      for (const LaneMove &mv : lane_moves_[lane_index(l, k)]) {
        const Link &next = s.links[mv.out_link];
        const double nc = c + next.length / next.speed;
        if (nc < cost[mv.out_link]) {
          cost[mv.out_link] = nc;
          prev[mv.out_link] = l;
          open.emplace(nc, mv.out_link);
        }
      }
  }
  if (goal == kNone) return std::nullopt;
  Route r;
  for (std::size_t l = goal; l != kNone; l = prev[l]) r.links.push_back(l);
  std::reverse(r.links.begin(), r.links.end());
  for (std::size_t l : r.links) r.free_flow += s.links[l].length / s.links[l].speed;
  r.origin = static_cast<std::uint32_t>(origin);
  r.destination = static_cast<std::uint32_t>(destination);
  return r;
}

void TrafficSim::build_routes() {
  const Scenario &s = *scenario_;
  const std::size_t n = s.nodes.size();
  route_table_.assign(n * n, kNoRoute);
  auto ensure = [&](std::size_t o, std::size_t d, bool required) {
    if (o == d || route_table_[o * n + d] != kNoRoute) return;
    auto r = shortest_route(o, d);
    if (!r) {
      if (required)
        throw ConfigError("scenario: no route from terminal " + std::to_string(o) + " to terminal " +
                          std::to_string(d));
      return;
    }
    route_table_[o * n + d] = static_cast<std::uint32_t>(routes_.size());
    routes_.push_back(std::move(*r));
  };
  for (const FlowGroup &g : s.flows)
    for (std::size_t o : g.origins)
      for (std::size_t d : g.destinations) ensure(o, d, true);
  for (std::size_t o : origins_)
    for (std::size_t d = 0; d < n; ++d)
      if (s.nodes[d].kind == NodeKind::Terminal) ensure(o, d, false);
}

std::uint32_t TrafficSim::route_id(std::size_t origin, std::size_t destination) const {
  const std::size_t n = scenario_->nodes.size();
  if (origin >= n || destination >= n) return kNoRoute;
  return route_table_[origin * n + destination];
}

double TrafficSim::free_flow_time(std::size_t origin, std::size_t destination) const {
  const std::uint32_t rid = route_id(origin, destination);
  if (rid == kNoRoute) throw ContractError("no route between the given terminals");
  return routes_[rid].free_flow;
}

int TrafficSim::choose_lane(const Route &route, std::uint32_t hop) const {
  const std::size_t link = route.links[hop];
  const int lanes = scenario_->links[link].lanes;
  int best = -1;
  std::size_t best_occ = 0;
  for (int k = 0; k < lanes; ++k) {
    const std::size_t lane = lane_index(link, k);
    if (hop + 1 < route.links.size()) {
      const std::size_t next = route.links[hop + 1];
      const auto &moves = lane_moves_[lane];
      if (std::none_of(moves.begin(), moves.end(), [&](const LaneMove &m) { return m.out_link == next; }))
        continue;
    }
    const std::size_t occ = lane_occupancy(lane);
    if (best < 0 || occ < best_occ) {
      best = k;
      best_occ = occ;
    }
  }
  if (best < 0) throw ContractError("route uses a turn with no serving lane");
  return best;
}

std::size_t TrafficSim::lane_occupancy(std::size_t lane) const {
  const LaneState &ls = state_.lanes.at(lane);
  return ls.moving.size() + ls.queue.size();
}

Observation TrafficSim::reset(std::uint64_t seed) {
  const Scenario &s = *scenario_;
  state_ = SimState{};
  state_.rng = Rng(seed);
  state_.lanes.resize(lane_link_.size());
  state_.signals.resize(s.intersections.size());
  state_.pending.resize(origins_.size());
  return observe();
}

bool TrafficSim::is_green(std::size_t agent, std::size_t movement) const {
  if (all_red_) return false;
  const SignalState &sig = state_.signals[agent];
  const bool now = phase_mask_[agent][sig.phase][movement];
  if (sig.yellow_left > 0) return now && phase_mask_[agent][sig.previous][movement];
  return now;
}

std::uint32_t TrafficSim::inject_vehicle(std::size_t origin, std::size_t destination) {
  const std::uint32_t rid = route_id(origin, destination);
  if (rid == kNoRoute) throw ContractError("no route between the given terminals");
  const Route &route = routes_[rid];
  const int lane = choose_lane(route, 0);
  const std::size_t li = lane_index(route.links[0], lane);
  if (lane_occupancy(li) >= static_cast<std::size_t>(lane_capacity_[li]))
    throw ContractError("inject_vehicle: origin lane is full");
  Vehicle v;
  v.route = rid;
  v.lane = lane;
  v.spawn_time = v.entry_time = state_.clock;
  const auto id = static_cast<std::uint32_t>(state_.vehicles.size());
  state_.vehicles.push_back(v);
  state_.lanes[li].moving.push_back(id);
  ++state_.spawned;
  return id;
}

void TrafficSim::spawn_phase() {
  const Scenario &s = *scenario_;
  const double now = static_cast<double>(state_.clock);
  for (const FlowGroup &g : s.flows)
    for (std::size_t o : g.origins) {
      const double p = g.rate_at(now) / 3600.0;
      if (!state_.rng.bernoulli(p)) continue;
      const std::size_t d = g.destinations[state_.rng.below(g.destinations.size())];
      if (d == o) continue;
      state_.spawn_log.push_back({state_.clock, static_cast<std::uint32_t>(o), static_cast<std::uint32_t>(d)});
      state_.pending[origin_slot_[o]].push_back({route_id(o, d), state_.clock});
    }
  for (std::size_t slot = 0; slot < origins_.size(); ++slot) {
    auto &queue = state_.pending[slot];
    while (!queue.empty()) {
      const Route &route = routes_[queue.front().route];
      const int lane = choose_lane(route, 0);
      const std::size_t li = lane_index(route.links[0], lane);
      if (lane_occupancy(li) >= static_cast<std::size_t>(lane_capacity_[li])) {
        ++state_.blocked_spawns;
        break;
      }
      Vehicle v;
      v.route = queue.front().route;
      v.lane = lane;
      v.spawn_time = v.entry_time = state_.clock;
      const auto id = static_cast<std::uint32_t>(state_.vehicles.size());
      state_.vehicles.push_back(v);
      state_.lanes[li].moving.push_back(id);
      ++state_.spawned;
      queue.pop_front();
    }
  }
}

void TrafficSim::move_phase() {
  const Scenario &s = *scenario_;
  const std::int64_t next_clock = state_.clock + 1;
  for (std::size_t li = 0; li < state_.lanes.size(); ++li) {
    LaneState &ls = state_.lanes[li];
    const Link &link = s.links[lane_link_[li]];
    while (!ls.moving.empty()) {
      Vehicle &v = state_.vehicles[ls.moving.front()];
      if (static_cast<double>(next_clock - v.entry_time) * link.speed < link.length) break;
      const std::uint32_t id = ls.moving.front();
      ls.moving.pop_front();
      if (link_agent_[lane_link_[li]] == kNone) {
        v.done = true;
        ++state_.completed;
        const double delay = static_cast<double>(next_clock - v.spawn_time) - routes_[v.route].free_flow;
        state_.trip_delay_sum += delay;
        state_.trip_delays.push_back(delay);
      } else {
        v.queued = true;
        v.queue_join = next_clock;
        ls.queue.push_back(id);
      }
    }
  }
}

void TrafficSim::discharge_phase() {
  const double sat = scenario_->params.saturation_flow;
  const std::int64_t next_clock = state_.clock + 1;
  for (std::size_t a = 0; a < agent_lanes_.size(); ++a) {
    for (std::size_t li : agent_lanes_[a]) {
      LaneState &ls = state_.lanes[li];
      // True when the head vehicle's movement is green right now.
      auto head_green = [&]() -> bool {
        const Vehicle &v = state_.vehicles[ls.queue.front()];
        const std::size_t next = routes_[v.route].links[v.hop + 1];
        for (const LaneMove &m : lane_moves_[li])
          if (m.out_link == next) return is_green(a, m.movement);
        return false;
      };
      if (ls.queue.empty() || !head_green()) {
        ls.credit = 0.0;
        continue;
      }
      ls.credit += sat;
      while (ls.credit >= 1.0 && !ls.queue.empty() && head_green()) {
        const std::uint32_t id = ls.queue.front();
        Vehicle &v = state_.vehicles[id];
        const Route &route = routes_[v.route];
        const int lane = choose_lane(route, v.hop + 1);
        const std::size_t target = lane_index(route.links[v.hop + 1], lane);
        if (lane_occupancy(target) >= static_cast<std::size_t>(lane_capacity_[target])) break;
        ls.queue.pop_front();
        v.hop += 1;
        v.lane = lane;
        v.entry_time = next_clock;
        v.queued = false;
        state_.lanes[target].moving.push_back(id);
        ls.credit -= 1.0;
      }
      ls.credit = ls.queue.empty() ? 0.0 : std::min(ls.credit, 1.0);
    }
  }
}

void TrafficSim::tick() {
  spawn_phase();
  move_phase();
  discharge_phase();
  for (SignalState &sig : state_.signals) {
    if (sig.yellow_left > 0) --sig.yellow_left;
    ++sig.since_switch;
  }
  ++state_.clock;
}

StepResult TrafficSim::step(std::span<const std::size_t> joint_action) {
  if (joint_action.size() != n_agents())
    throw ContractError("joint action has " + std::to_string(joint_action.size()) + " entries, expected " +
                        std::to_string(n_agents()));
  for (std::size_t a = 0; a < n_agents(); ++a)
    if (joint_action[a] >= n_phases(a))
      throw ContractError("agent " + std::to_string(a) + " chose phase " + std::to_string(joint_action[a]) +
                          " but has only " + std::to_string(n_phases(a)));
  for (std::size_t a = 0; a < n_agents(); ++a) {
    SignalState &sig = state_.signals[a];
    if (joint_action[a] != sig.phase) {
      sig.previous = sig.phase;
      sig.phase = joint_action[a];
      sig.yellow_left = timing_.yellow;
      sig.since_switch = 0;
    }
  }
  const std::uint64_t completed_before = state_.completed;
  const std::size_t delays_before = state_.trip_delays.size();
  for (int k = 0; k < timing_.delta_t; ++k) tick();

  StepResult out;
  out.obs = observe();
  out.rewards.resize(n_agents());
  for (std::size_t a = 0; a < n_agents(); ++a) out.rewards[a] = local_reward(a, timing_.reward_coef);
  out.metrics = snapshot_metrics();
  out.completed_in_step = state_.completed - completed_before;
  out.trip_delays_in_step.assign(state_.trip_delays.begin() + static_cast<std::ptrdiff_t>(delays_before),
                                 state_.trip_delays.end());
  return out;
}

double TrafficSim::measure_wave(std::size_t lane) const {
  const LaneState &ls = state_.lanes.at(lane);
  const Link &link = scenario_->links[lane_link_[lane]];
  const double range = scenario_->params.detection_range;
  double wave = static_cast<double>(ls.queue.size());
  for (std::uint32_t id : ls.moving) {
    const Vehicle &v = state_.vehicles[id];
    const double travelled = std::min(link.length, link.speed * static_cast<double>(state_.clock - v.entry_time));
    if (link.length - travelled > range) break; // later entries are further upstream
    wave += 1.0;
  }
  return wave;
}

double TrafficSim::measure_wait(std::size_t lane) const {
  const LaneState &ls = state_.lanes.at(lane);
  if (ls.queue.empty()) return 0.0;
  return static_cast<double>(state_.clock - state_.vehicles[ls.queue.front()].queue_join);
}

double TrafficSim::measure_queue(std::size_t lane) const {
  return static_cast<double>(state_.lanes.at(lane).queue.size());
}

double TrafficSim::local_reward(AgentId agent, double coef) const {
  double r = 0.0;
  for (std::size_t li : agent_lanes_.at(agent)) r -= measure_queue(li) + coef * measure_wait(li);
  return r;
}

Observation TrafficSim::observe() const {
  Observation obs;
  obs.wave.resize(n_agents());
  obs.wait.resize(n_agents());
  obs.queue.resize(n_agents());
  for (std::size_t a = 0; a < n_agents(); ++a)
    for (std::size_t li : agent_lanes_[a]) {
      obs.wave[a].push_back(measure_wave(li));
      obs.wait[a].push_back(measure_wait(li));
      obs.queue[a].push_back(measure_queue(li));
    }
  return obs;
}

SimMetrics TrafficSim::snapshot_metrics() const {
  const Scenario &s = *scenario_;
  SimMetrics m;
  double queued = 0.0, age = 0.0;
  for (const auto &lanes : agent_lanes_)
    for (std::size_t li : lanes)
      for (std::uint32_t id : state_.lanes[li].queue) {
        queued += 1.0;
        age += static_cast<double>(state_.clock - state_.vehicles[id].queue_join);
      }
  m.avg_queue = queued / static_cast<double>(n_agents());
  if (queued > 0.0) m.avg_delay = age / queued;
  double speed = 0.0;
  std::uint64_t count = 0;
  for (std::size_t li = 0; li < state_.lanes.size(); ++li) {
    const LaneState &ls = state_.lanes[li];
    speed += s.links[lane_link_[li]].speed * static_cast<double>(ls.moving.size());
    count += ls.moving.size() + ls.queue.size();
  }
  if (count > 0) m.avg_speed = speed / static_cast<double>(count);
  m.completed = state_.completed;
  m.accumulation = count;
  return m;
}

std::uint64_t TrafficSim::digest() const {
  Fnv1a h;
  h.add(state_.clock);
  for (const Vehicle &v : state_.vehicles) {
    h.add(v.route);
    h.add(v.hop);
    h.add(v.lane);
    h.add(v.spawn_time);
    h.add(v.entry_time);
    h.add(v.queue_join);
    h.add(static_cast<std::uint8_t>(v.queued | (v.done << 1)));
  }
  for (const LaneState &ls : state_.lanes) {
    h.add(ls.moving.size());
    for (auto id : ls.moving) h.add(id);
    h.add(ls.queue.size());
    for (auto id : ls.queue) h.add(id);
    h.add(ls.credit);
  }
  for (const SignalState &sig : state_.signals) {
    h.add(sig.phase);
    h.add(sig.previous);
    h.add(sig.yellow_left);
    h.add(sig.since_switch);
  }
  for (const auto &q : state_.pending) {
    h.add(q.size());
    for (const auto &p : q) {
      h.add(p.route);
      h.add(p.request_time);
    }
  }
  h.add(state_.rng.save());
  h.add(state_.spawned);
  h.add(state_.completed);
  h.add(state_.blocked_spawns);
  for (double d : state_.trip_delays) h.add(d);
  return h.value();
}

void TrafficSim::check_invariants() const {
  const std::uint64_t inside = state_.in_network();
  if (state_.spawned != state_.completed + inside)
    throw ContractError("vehicle conservation violated: spawned " + std::to_string(state_.spawned) + " != completed " +
                        std::to_string(state_.completed) + " + in-network " + std::to_string(inside));
  std::vector<int> seen(state_.vehicles.size(), 0);
  for (std::size_t li = 0; li < state_.lanes.size(); ++li) {
    const LaneState &ls = state_.lanes[li];
    if (lane_occupancy(li) > static_cast<std::size_t>(lane_capacity_[li]))
      throw ContractError("lane " + std::to_string(li) + " exceeds its storage capacity");
    for (auto id : ls.moving) ++seen[id];
    for (auto id : ls.queue) ++seen[id];
  }
  for (std::size_t v = 0; v < seen.size(); ++v)
    if (seen[v] != (state_.vehicles[v].done ? 0 : 1))
      throw ContractError("vehicle " + std::to_string(v) + " is not on exactly one link");
}

nlohmann::json TrafficSim::save_state() const {
  using nlohmann::json;
  json doc;
  doc["clock"] = state_.clock;
  json vehicles = json::array();
  for (const Vehicle &v : state_.vehicles)
    vehicles.push_back({v.route, v.hop, v.lane, v.spawn_time, v.entry_time, v.queue_join, v.queued, v.done});
  doc["vehicles"] = std::move(vehicles);
  json lanes = json::array();
  for (const LaneState &ls : state_.lanes)
    lanes.push_back({std::vector<std::uint32_t>(ls.moving.begin(), ls.moving.end()),
                     std::vector<std::uint32_t>(ls.queue.begin(), ls.queue.end()), ls.credit});
  doc["lanes"] = std::move(lanes);
  json signals = json::array();
  for (const SignalState &sig : state_.signals)
    signals.push_back({sig.phase, sig.previous, sig.yellow_left, sig.since_switch});
  doc["signals"] = std::move(signals);
  json pending = json::array();
  for (const auto &q : state_.pending) {
    json entries = json::array();
    for (const auto &p : q) entries.push_back({p.route, p.request_time});
    pending.push_back(std::move(entries));
  }
  doc["pending"] = std::move(pending);
  doc["rng"] = state_.rng.save();
  doc["spawned"] = state_.spawned;
  doc["completed"] = state_.completed;
  doc["blocked_spawns"] = state_.blocked_spawns;
  doc["trip_delay_sum"] = state_.trip_delay_sum;
  doc["trip_delays"] = state_.trip_delays;
  json log = json::array();
  for (const SpawnRecord &r : state_.spawn_log) log.push_back({r.time, r.origin, r.destination});
  doc["spawn_log"] = std::move(log);
  return doc;
}

void TrafficSim::load_state(const nlohmann::json &doc) {
  SimState st;
  st.clock = doc.at("clock").get<std::int64_t>();
  for (const auto &v : doc.at("vehicles"))
    st.vehicles.push_back({v.at(0).get<std::uint32_t>(), v.at(1).get<std::uint32_t>(), v.at(2).get<std::int32_t>(),
                           v.at(3).get<std::int64_t>(), v.at(4).get<std::int64_t>(), v.at(5).get<std::int64_t>(),
                           v.at(6).get<bool>(), v.at(7).get<bool>()});
  for (const auto &l : doc.at("lanes")) {
    LaneState ls;
    for (auto id : l.at(0)) ls.moving.push_back(id.get<std::uint32_t>());
    for (auto id : l.at(1)) ls.queue.push_back(id.get<std::uint32_t>());
    ls.credit = l.at(2).get<double>();
    st.lanes.push_back(std::move(ls));
  }
  for (const auto &s : doc.at("signals"))
    st.signals.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(), s.at(2).get<int>(),
                          s.at(3).get<std::int64_t>()});
  for (const auto &q : doc.at("pending")) {
    std::deque<PendingSpawn> entries;
    for (const auto &p : q) entries.push_back({p.at(0).get<std::uint32_t>(), p.at(1).get<std::int64_t>()});
    st.pending.push_back(std::move(entries));
  }
  st.rng.restore(doc.at("rng").get<std::string>());
  st.spawned = doc.at("spawned").get<std::uint64_t>();
  st.completed = doc.at("completed").get<std::uint64_t>();
  st.blocked_spawns = doc.at("blocked_spawns").get<std::uint64_t>();
  st.trip_delay_sum = doc.at("trip_delay_sum").get<double>();
  st.trip_delays = doc.at("trip_delays").get<std::vector<double>>();
  for (const auto &r : doc.at("spawn_log"))
    st.spawn_log.push_back({r.at(0).get<std::int64_t>(), r.at(1).get<std::uint32_t>(), r.at(2).get<std::uint32_t>()});
  if (st.lanes.size() != lane_link_.size() || st.signals.size() != n_agents() || st.pending.size() != origins_.size())
    throw ConfigError("simulator checkpoint does not match the scenario");
  state_ = std::move(st);
}

} // namespace ma2c::sim
