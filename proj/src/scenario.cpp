#include "ma2c/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>

#include "ma2c/error.hpp"

namespace ma2c::sim {

using nlohmann::json;

double FlowGroup::rate_at(double t) const {
  for (const auto &piece : profile)
    if (t >= piece.start && t < piece.end) return piece.rate;
  return 0.0;
}

int Scenario::lane_capacity(std::size_t link) const {
  return static_cast<int>(std::floor(links.at(link).length / params.vehicle_space));
}

std::vector<std::pair<std::size_t, int>> Scenario::incoming_lanes(AgentId agent) const {
  const std::size_t node = intersections.at(agent).node;
  std::vector<std::pair<std::size_t, int>> lanes;
  for (std::size_t l = 0; l < links.size(); ++l)
    if (links[l].to == node)
      for (int k = 0; k < links[l].lanes; ++k) lanes.emplace_back(l, k);
  return lanes;
}

double Scenario::expected_demand() const {
  double total = 0.0;
  for (const auto &g : flows) {
    double per_origin = 0.0;
    for (const auto &p : g.profile) {
      const double lo = std::max(p.start, 0.0);
      const double hi = std::min(p.end, duration);
      if (hi > lo) per_origin += p.rate * (hi - lo) / 3600.0;
    }
    total += per_origin * static_cast<double>(g.origins.size());
  }
  return total;
}

namespace {

[[noreturn]] void fail(const std::string &msg) { throw ConfigError("scenario: " + msg); }

} // namespace

void Scenario::validate() const {
  if (intersections.empty()) fail("no intersections");
  if (!(params.saturation_flow > 0.0)) fail("saturation_flow must be > 0");
  if (!(params.vehicle_space > 0.0)) fail("vehicle_space must be > 0");
  if (!(params.detection_range >= 0.0)) fail("detection_range must be >= 0");
  if (!(duration > 0.0)) fail("duration must be > 0");

  for (std::size_t l = 0; l < links.size(); ++l) {
    const Link &k = links[l];
    const std::string tag = "link " + std::to_string(l);
    if (k.from >= nodes.size() || k.to >= nodes.size()) fail(tag + " references an unknown node");
    if (k.from == k.to) fail(tag + " is a self-loop");
    if (!(k.length > 0.0) || !(k.speed > 0.0) || k.lanes < 1)
      fail(tag + " needs length > 0, speed > 0 and lanes >= 1");
    if (lane_capacity(l) < 1) fail(tag + " stores no vehicle (length < vehicle_space)");
    if (nodes[k.from].kind == NodeKind::Terminal && nodes[k.to].kind == NodeKind::Terminal)
      fail(tag + " connects two terminals");
  }

  std::set<std::size_t> signalized;
  for (std::size_t a = 0; a < intersections.size(); ++a) {
    const Intersection &x = intersections[a];
    const std::string tag = "intersection " + std::to_string(a);
    if (x.node >= nodes.size() || nodes[x.node].kind != NodeKind::Intersection)
      fail(tag + " does not reference an intersection node");
    if (!signalized.insert(x.node).second) fail(tag + " duplicates node " + std::to_string(x.node));
    if (x.phases.size() < 2) fail(tag + " needs at least two phases");

    std::set<std::pair<std::size_t, int>> covered;
    for (const Movement &m : x.movements) {
      if (m.in_link >= links.size() || m.out_link >= links.size())
        fail(tag + " movement references an unknown link");
      if (links[m.in_link].to != x.node || links[m.out_link].from != x.node)
        fail(tag + " movement does not pass through its node");
      if (m.lane < 0 || m.lane >= links[m.in_link].lanes)
        fail(tag + " movement uses a missing lane");
      covered.emplace(m.in_link, m.lane);
    }
    for (const auto &lane : incoming_lanes(a))
      if (!covered.count(lane))
        fail(tag + " has no movement for lane " + std::to_string(lane.second) + " of link " +
             std::to_string(lane.first));

    std::vector<bool> used(x.movements.size(), false);
    for (const auto &phase : x.phases)
      for (std::size_t m : phase) {
        if (m >= x.movements.size()) fail(tag + " phase references an unknown movement");
        used[m] = true;
      }
    if (std::find(used.begin(), used.end(), false) != used.end())
      fail(tag + " has a movement that is green in no phase");
  }
  for (std::size_t n = 0; n < nodes.size(); ++n)
    if (nodes[n].kind == NodeKind::Intersection && !signalized.count(n))
      fail("node " + std::to_string(n) + " is an intersection without a phase table");

  for (const FlowGroup &g : flows) {
    const std::string tag = "flow group '" + g.name + "'";
    if (g.origins.empty() || g.destinations.empty()) fail(tag + " needs origins and destinations");
    for (std::size_t t : g.origins)
      if (t >= nodes.size() || nodes[t].kind != NodeKind::Terminal) fail(tag + " origin is not a terminal");
    for (std::size_t t : g.destinations)
      if (t >= nodes.size() || nodes[t].kind != NodeKind::Terminal)
        fail(tag + " destination is not a terminal");
    double cursor = 0.0;
    for (const RatePiece &p : g.profile) {
      if (p.rate < 0.0 || p.rate > 3600.0) fail(tag + " rate must lie in [0, 3600] veh/hr");
      if (p.start != cursor || !(p.end > p.start)) fail(tag + " profile must be contiguous from 0");
      cursor = p.end;
    }
    if (cursor < duration) fail(tag + " profile does not cover the scenario duration");
  }

  (void)agent_network(); // validates agent_edges
}

namespace {

enum class Heading { East, West, South, North };

} // namespace

Scenario build_grid_scenario(const GridParams &p) {
  if (p.n < 2) throw ConfigError("grid dimension must be >= 2 (got " + std::to_string(p.n) + ")");
  const std::size_t n = p.n;
  const double L = p.link_length;
  Scenario s;
  s.params = p.sim;
  s.duration = p.duration;

  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      s.nodes.push_back({NodeKind::Intersection, "I" + std::to_string(r) + "_" + std::to_string(c),
                         static_cast<double>(c) * L, -static_cast<double>(r) * L});
  // Terminals: west/east per row, north/south per column.
  std::vector<std::size_t> west(n), east(n), north(n), south(n);
  auto add_terminal = [&](const std::string &name, double x, double y) {
    s.nodes.push_back({NodeKind::Terminal, name, x, y});
    return s.nodes.size() - 1;
  };
  for (std::size_t r = 0; r < n; ++r) {
    west[r] = add_terminal("W" + std::to_string(r), -L, -static_cast<double>(r) * L);
    east[r] = add_terminal("E" + std::to_string(r), static_cast<double>(n) * L, -static_cast<double>(r) * L);
  }
  for (std::size_t c = 0; c < n; ++c) {
    north[c] = add_terminal("N" + std::to_string(c), static_cast<double>(c) * L, L);
    south[c] = add_terminal("S" + std::to_string(c), static_cast<double>(c) * L, -static_cast<double>(n) * L);
  }

  auto add_link = [&](std::size_t from, std::size_t to, bool arterial) {
    s.links.push_back({from, to, L, arterial ? p.arterial_lanes : p.avenue_lanes,
                       arterial ? p.arterial_speed : p.avenue_speed});
  };
  auto node_at = [&](std::size_t r, std::size_t c) { return r * n + c; };
  // Neighbor of intersection (r,c) in a compass direction: another
  // intersection or the boundary terminal.
  auto neighbor = [&](std::size_t r, std::size_t c, Heading h) -> std::size_t {
    switch (h) {
    case Heading::East: return c + 1 < n ? node_at(r, c + 1) : east[r];
    case Heading::West: return c > 0 ? node_at(r, c - 1) : west[r];
    case Heading::South: return r + 1 < n ? node_at(r + 1, c) : south[c];
    case Heading::North: return r > 0 ? node_at(r - 1, c) : north[c];
    }
    return 0;
  };
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t me = node_at(r, c);
      for (Heading h : {Heading::East, Heading::West, Heading::South, Heading::North}) {
        const std::size_t other = neighbor(r, c, h);
        const bool arterial = h == Heading::East || h == Heading::West;
        add_link(me, other, arterial);
        // Links from terminals, and between intersections once per direction.
        if (s.nodes[other].kind == NodeKind::Terminal) add_link(other, me, arterial);
      }
    }
  auto find_link = [&](std::size_t from, std::size_t to) {
    for (std::size_t l = 0; l < s.links.size(); ++l)
      if (s.links[l].from == from && s.links[l].to == to) return l;
    throw ContractError("grid builder: missing link");
  };

  // Per approach: the heading a vehicle travels on entering the intersection.
  // Right/left turns relative to that heading.
  auto right_of = [](Heading h) {
    switch (h) {
    case Heading::East: return Heading::South;
    case Heading::West: return Heading::North;
    case Heading::South: return Heading::West;
    case Heading::North: return Heading::East;
    }
    return h;
  };
  auto left_of = [](Heading h) {
    switch (h) {
    case Heading::East: return Heading::North;
    case Heading::West: return Heading::South;
    case Heading::South: return Heading::East;
    case Heading::North: return Heading::West;
    }
    return h;
  };
  auto opposite = [](Heading h) {
    switch (h) {
    case Heading::East: return Heading::West;
    case Heading::West: return Heading::East;
    case Heading::South: return Heading::North;
    case Heading::North: return Heading::South;
    }
    return h;
  };

  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t me = node_at(r, c);
      Intersection x;
      x.node = me;
      // Movement groups used by the phase table.
      std::vector<std::size_t> ew_through, ew_left, from_east, from_west, ns_all;
      for (Heading travel : {Heading::East, Heading::West, Heading::South, Heading::North}) {
        const std::size_t upstream = neighbor(r, c, opposite(travel));
        const std::size_t in = find_link(upstream, me);
        const bool arterial = travel == Heading::East || travel == Heading::West;
        const int left_lane = s.links[in].lanes > 1 ? 1 : 0;
        auto add = [&](Heading out_dir, int lane) {
          x.movements.push_back({in, lane, find_link(me, neighbor(r, c, out_dir))});
          return x.movements.size() - 1;
        };
        const std::size_t through = add(travel, 0);
        const std::size_t right = add(right_of(travel), 0);
        const std::size_t left = add(left_of(travel), left_lane);
        if (arterial) {
          ew_through.insert(ew_through.end(), {through, right});
          ew_left.push_back(left);
          auto &side = travel == Heading::West ? from_east : from_west;
          side.insert(side.end(), {through, right, left});
        } else {
          ns_all.insert(ns_all.end(), {through, right, left});
        }
      }
      x.phases = {ew_through, ew_left, from_east, from_west, ns_all};
      for (auto &ph : x.phases) std::sort(ph.begin(), ph.end());
      s.intersections.push_back(std::move(x));
    }

  s.agent_edges = grid_edges(n);

  // Demand: piecewise-constant multipliers over twelve equal bins of the
  // scenario duration. F1/f1 ramp up and hold, then fade after a quarter of
  // the horizon while F2/f2 (swapped O-D) take over.
  const std::vector<double> first_wave{0.5, 1.0, 1.0, 0.7, 0.4, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  const std::vector<double> second_wave{0.0, 0.0, 0.0, 0.3, 0.6, 0.9, 1.0, 1.0, 0.7, 0.4, 0.1, 0.0};
  auto profile = [&](const std::vector<double> &mult, double peak) {
    std::vector<RatePiece> pieces;
    const double bin = p.duration / static_cast<double>(mult.size());
    for (std::size_t b = 0; b < mult.size(); ++b) {
      const double start = static_cast<double>(b) * bin;
      const double end = b + 1 == mult.size() ? p.duration : static_cast<double>(b + 1) * bin;
      pieces.push_back({start, end, mult[b] * peak});
    }
    return pieces;
  };
  s.flows.push_back({"F1", west, east, profile(first_wave, p.major_peak)});
  s.flows.push_back({"f1", north, south, profile(first_wave, p.minor_peak)});
  s.flows.push_back({"F2", east, west, profile(second_wave, p.major_peak)});
  s.flows.push_back({"f2", south, north, profile(second_wave, p.minor_peak)});

  s.validate();
  return s;
}

nlohmann::json scenario_to_json(const Scenario &s) {
  json doc;
  doc["version"] = 1;
  doc["duration"] = s.duration;
  doc["sim"] = {{"saturation_flow", s.params.saturation_flow},
                {"vehicle_space", s.params.vehicle_space},
                {"detection_range", s.params.detection_range}};
  json nodes = json::array();
  for (const Node &n : s.nodes)
    nodes.push_back({{"name", n.name},
                     {"kind", n.kind == NodeKind::Terminal ? "terminal" : "intersection"},
                     {"x", n.x},
                     {"y", n.y}});
  doc["nodes"] = std::move(nodes);
  json links = json::array();
  for (const Link &l : s.links)
    links.push_back({{"from", l.from}, {"to", l.to}, {"length", l.length}, {"lanes", l.lanes}, {"speed", l.speed}});
  doc["links"] = std::move(links);
  json phases = json::array();
  for (const Intersection &x : s.intersections) {
    json moves = json::array();
    for (const Movement &m : x.movements) moves.push_back({m.in_link, m.lane, m.out_link});
    phases.push_back({{"node", x.node}, {"movements", moves}, {"phases", x.phases}});
  }
  doc["phases"] = std::move(phases);
  json flows = json::array();
  for (const FlowGroup &g : s.flows) {
    json prof = json::array();
    for (const RatePiece &p : g.profile) prof.push_back({p.start, p.end, p.rate});
    flows.push_back({{"name", g.name}, {"origins", g.origins}, {"destinations", g.destinations}, {"profile", prof}});
  }
  doc["flows"] = std::move(flows);
  json edges = json::array();
  for (auto [a, b] : s.agent_edges) edges.push_back({a, b});
  doc["agent_edges"] = std::move(edges);
  return doc;
}

Scenario scenario_from_json(const nlohmann::json &doc) {
  Scenario s;
  try {
    if (doc.contains("version") && doc.at("version").get<int>() != 1)
      throw ConfigError("scenario: unsupported version " + doc.at("version").dump());
    s.duration = doc.value("duration", s.duration);
    if (doc.contains("sim")) {
      const json &sim = doc.at("sim");
      s.params.saturation_flow = sim.value("saturation_flow", s.params.saturation_flow);
      s.params.vehicle_space = sim.value("vehicle_space", s.params.vehicle_space);
      s.params.detection_range = sim.value("detection_range", s.params.detection_range);
    }
    for (const json &n : doc.at("nodes")) {
      const std::string kind = n.at("kind").get<std::string>();
      if (kind != "terminal" && kind != "intersection")
        throw ConfigError("scenario: node kind must be 'terminal' or 'intersection', got '" + kind + "'");
      s.nodes.push_back({kind == "terminal" ? NodeKind::Terminal : NodeKind::Intersection,
                         n.value("name", std::string{}), n.value("x", 0.0), n.value("y", 0.0)});
    }
    for (const json &l : doc.at("links"))
      s.links.push_back({l.at("from").get<std::size_t>(), l.at("to").get<std::size_t>(),
                         l.value("length", 200.0), l.value("lanes", 1), l.value("speed", 20.0)});
    for (const json &x : doc.at("phases")) {
      Intersection inter;
      inter.node = x.at("node").get<std::size_t>();
      for (const json &m : x.at("movements"))
        inter.movements.push_back({m.at(0).get<std::size_t>(), m.at(1).get<int>(), m.at(2).get<std::size_t>()});
      inter.phases = x.at("phases").get<std::vector<std::vector<std::size_t>>>();
      s.intersections.push_back(std::move(inter));
    }
    if (doc.contains("flows"))
      for (const json &g : doc.at("flows")) {
        FlowGroup group;
        group.name = g.value("name", std::string{});
        group.origins = g.at("origins").get<std::vector<std::size_t>>();
        group.destinations = g.at("destinations").get<std::vector<std::size_t>>();
        for (const json &p : g.at("profile"))
          group.profile.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
        s.flows.push_back(std::move(group));
      }
    if (doc.contains("agent_edges"))
      for (const json &e : doc.at("agent_edges"))
        s.agent_edges.emplace_back(e.at(0).get<AgentId>(), e.at(1).get<AgentId>());
  } catch (const json::exception &e) {
    throw ConfigError(std::string("scenario: malformed document: ") + e.what());
  }
  s.validate();
  return s;
}

Scenario load_scenario(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error &e) {
    throw ConfigError("scenario " + path.string() + ": " + e.what());
  }
  return scenario_from_json(doc);
}

void save_scenario(const Scenario &scenario, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write scenario file " + path.string());
  out << scenario_to_json(scenario).dump(1) << '\n';
}

} // namespace ma2c::sim
