#include "ma2c/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "ma2c/error.hpp"

namespace ma2c {

using nlohmann::json;

namespace {

struct KindName {
  AgentKind kind;
  std::string_view name;
};
constexpr KindName kKinds[] = {{AgentKind::MA2C, "ma2c"},       {AgentKind::IA2C, "ia2c"},
                               {AgentKind::IQL_LR, "iql-lr"},   {AgentKind::IQL_DNN, "iql-dnn"},
                               {AgentKind::GREEDY, "greedy"},   {AgentKind::RANDOM, "random"},
                               {AgentKind::FIXED_TIME, "fixed-time"}};

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

// Overlays `user` onto `base`, rejecting keys the schema does not know.
void overlay(json &base, const json &user, const std::string &path) {
  if (!user.is_object()) throw ConfigError("config: '" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = it.key();
    const std::string full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) {
      std::string nearest;
      std::size_t best = SIZE_MAX;
      for (auto b = base.begin(); b != base.end(); ++b) {
        const std::size_t d = edit_distance(key, b.key());
        if (d < best) {
          best = d;
          nearest = path.empty() ? b.key() : path + "." + b.key();
        }
      }
      throw ConfigError("config: unknown key '" + full + "' (did you mean '" + nearest + "'?)");
    }
    json &slot = base[key];
    if (slot.is_object()) {
      overlay(slot, it.value(), full);
    } else if (slot.is_number() != it.value().is_number() || slot.is_string() != it.value().is_string() ||
               slot.is_boolean() != it.value().is_boolean()) {
      throw ConfigError("config: '" + full + "' has the wrong type (expected " + slot.type_name() + ")");
    } else if (slot.is_number_unsigned() && it.value().is_number_integer() && !it.value().is_number_unsigned()) {
      throw ConfigError("config: '" + full + "' must be non-negative");
    } else if (slot.is_number_integer() && it.value().is_number_float()) {
      throw ConfigError("config: '" + full + "' must be an integer");
    } else {
      slot = it.value();
    }
  }
}

void require(bool ok, const std::string &field, const std::string &bound) {
  if (!ok) throw ConfigError("config: " + field + " must satisfy " + bound);
}

} // namespace

std::string_view agent_kind_name(AgentKind kind) {
  for (const auto &k : kKinds)
    if (k.kind == kind) return k.name;
  return "unknown";
}

AgentKind parse_agent_kind(std::string_view name) {
  std::string norm;
  for (char c : name) norm += c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (const auto &k : kKinds)
    if (k.name == norm) return k.kind;
  throw ConfigError("unknown agent kind '" + std::string(name) +
                    "' (expected ma2c, ia2c, iql-lr, iql-dnn, greedy, random or fixed-time)");
}

AgentFlags agent_flags(AgentKind kind) {
  if (kind == AgentKind::MA2C) return {true, true};
  return {false, false};
}

void RunConfig::validate() const {
  require(gamma >= 0.0 && gamma < 1.0, "gamma", "gamma in [0, 1)");
  require(alpha >= 0.0 && alpha <= 1.0, "alpha", "alpha in [0, 1]");
  require(beta >= 0.0, "beta", "beta >= 0");
  require(lr_actor > 0.0, "lr_actor", "lr_actor > 0");
  require(lr_critic > 0.0, "lr_critic", "lr_critic > 0");
  require(batch_size >= 1, "batch_size", "batch_size >= 1");
  require(episode_length >= 1, "episode_length", "episode_length >= 1");
  require(yellow_time >= 0 && delta_t > yellow_time, "delta_t/yellow_time", "delta_t > yellow_time >= 0");
  require(reward_coef >= 0.0, "reward_coef", "reward_coef >= 0");
  require(norm_wave > 0.0, "norm_wave", "norm_wave > 0");
  require(norm_wait > 0.0, "norm_wait", "norm_wait > 0");
  require(norm_reward > 0.0, "norm_reward", "norm_reward > 0");
  require(state_clip > 0.0, "state_clip", "state_clip > 0");
  require(reward_clip > 0.0, "reward_clip", "reward_clip > 0");
  require(grad_clip > 0.0, "grad_clip", "grad_clip > 0");
  require(iql.lr > 0.0, "iql.lr", "iql.lr > 0");
  require(iql.batch_size >= 1, "iql.batch_size", "iql.batch_size >= 1");
  require(iql.replay_size >= 1, "iql.replay_size", "iql.replay_size >= 1");
  require(iql.eps_start >= 0.0 && iql.eps_start <= 1.0, "iql.eps_start", "iql.eps_start in [0, 1]");
  require(iql.eps_end >= 0.0 && iql.eps_end <= 1.0, "iql.eps_end", "iql.eps_end in [0, 1]");
  require(iql.eps_decay_fraction > 0.0 && iql.eps_decay_fraction <= 1.0, "iql.eps_decay_fraction",
          "iql.eps_decay_fraction in (0, 1]");
  require(iql.target_sync >= 1, "iql.target_sync", "iql.target_sync >= 1");
  require(layers.wave >= 1 && layers.wait >= 1 && layers.fingerprint >= 1 && layers.lstm >= 1, "layers",
          "every layer size >= 1");
  require(rmsprop.decay >= 0.0 && rmsprop.decay < 1.0, "rmsprop.decay", "rmsprop.decay in [0, 1)");
  require(rmsprop.eps > 0.0, "rmsprop.eps", "rmsprop.eps > 0");
  require(eval.episodes >= 1, "eval.episodes", "eval.episodes >= 1");
  require(grid.n >= 2, "grid.n", "grid.n >= 2");
  require(grid.link_length > 0.0 && grid.arterial_speed > 0.0 && grid.avenue_speed > 0.0, "grid",
          "positive link length and speeds");
  require(grid.arterial_lanes >= 1 && grid.avenue_lanes >= 1, "grid lanes", "lanes >= 1");
  require(grid.major_peak >= 0.0 && grid.major_peak <= 3600.0 && grid.minor_peak >= 0.0 && grid.minor_peak <= 3600.0,
          "grid peaks", "peak rates in [0, 3600] veh/hr");
  require(grid.sim.saturation_flow > 0.0, "grid.saturation_flow", "saturation_flow > 0");
  require(grid.sim.vehicle_space > 0.0, "grid.vehicle_space", "vehicle_space > 0");
}

json RunConfig::to_json() const {
  return {
      {"agent", std::string(agent_kind_name(agent))},
      {"gamma", gamma},
      {"alpha", alpha},
      {"beta", beta},
      {"lr_actor", lr_actor},
      {"lr_critic", lr_critic},
      {"batch_size", batch_size},
      {"episode_length", episode_length},
      {"delta_t", delta_t},
      {"yellow_time", yellow_time},
      {"reward_coef", reward_coef},
      {"norm_wave", norm_wave},
      {"norm_wait", norm_wait},
      {"norm_reward", norm_reward},
      {"state_clip", state_clip},
      {"reward_clip", reward_clip},
      {"grad_clip", grad_clip},
      {"total_steps", total_steps},
      {"checkpoint_interval", checkpoint_interval},
      {"seed", seed},
      {"iql",
       {{"lr", iql.lr},
        {"batch_size", iql.batch_size},
        {"replay_size", iql.replay_size},
        {"eps_start", iql.eps_start},
        {"eps_end", iql.eps_end},
        {"eps_decay_fraction", iql.eps_decay_fraction},
        {"target_sync", iql.target_sync}}},
      {"layers",
       {{"wave", layers.wave}, {"wait", layers.wait}, {"fingerprint", layers.fingerprint}, {"lstm", layers.lstm}}},
      {"rmsprop", {{"decay", rmsprop.decay}, {"eps", rmsprop.eps}}},
      {"eval", {{"episodes", eval.episodes}, {"seed_base", eval.seed_base}, {"sample", eval.sample}}},
      {"scenario", scenario},
      {"grid",
       {{"n", grid.n},
        {"link_length", grid.link_length},
        {"arterial_lanes", grid.arterial_lanes},
        {"arterial_speed", grid.arterial_speed},
        {"avenue_lanes", grid.avenue_lanes},
        {"avenue_speed", grid.avenue_speed},
        {"major_peak", grid.major_peak},
        {"minor_peak", grid.minor_peak},
        {"saturation_flow", grid.sim.saturation_flow},
        {"vehicle_space", grid.sim.vehicle_space},
        {"detection_range", grid.sim.detection_range}}},
  };
}

RunConfig RunConfig::from_json(const json &doc) {
  json merged = RunConfig{}.to_json();
  if (!doc.is_null()) overlay(merged, doc, "");
  RunConfig c;
  try {
    c.agent = parse_agent_kind(merged.at("agent").get<std::string>());
    c.gamma = merged.at("gamma");
    c.alpha = merged.at("alpha");
    c.beta = merged.at("beta");
    c.lr_actor = merged.at("lr_actor");
    c.lr_critic = merged.at("lr_critic");
    c.batch_size = merged.at("batch_size");
    c.episode_length = merged.at("episode_length");
    c.delta_t = merged.at("delta_t");
    c.yellow_time = merged.at("yellow_time");
    c.reward_coef = merged.at("reward_coef");
    c.norm_wave = merged.at("norm_wave");
    c.norm_wait = merged.at("norm_wait");
    c.norm_reward = merged.at("norm_reward");
    c.state_clip = merged.at("state_clip");
    c.reward_clip = merged.at("reward_clip");
    c.grad_clip = merged.at("grad_clip");
    c.total_steps = merged.at("total_steps");
    c.checkpoint_interval = merged.at("checkpoint_interval");
    c.seed = merged.at("seed");
    const json &q = merged.at("iql");
    c.iql = {q.at("lr"),      q.at("batch_size"), q.at("replay_size"), q.at("eps_start"),
             q.at("eps_end"), q.at("eps_decay_fraction"), q.at("target_sync")};
    const json &l = merged.at("layers");
    c.layers = {l.at("wave"), l.at("wait"), l.at("fingerprint"), l.at("lstm")};
    c.rmsprop = {merged.at("rmsprop").at("decay"), merged.at("rmsprop").at("eps")};
    const json &e = merged.at("eval");
    c.eval = {e.at("episodes"), e.at("seed_base"), e.at("sample")};
    c.scenario = merged.at("scenario");
    const json &g = merged.at("grid");
    c.grid.n = g.at("n");
    c.grid.link_length = g.at("link_length");
    c.grid.arterial_lanes = g.at("arterial_lanes");
    c.grid.arterial_speed = g.at("arterial_speed");
    c.grid.avenue_lanes = g.at("avenue_lanes");
    c.grid.avenue_speed = g.at("avenue_speed");
    c.grid.major_peak = g.at("major_peak");
    c.grid.minor_peak = g.at("minor_peak");
    c.grid.sim.saturation_flow = g.at("saturation_flow");
    c.grid.sim.vehicle_space = g.at("vehicle_space");
    c.grid.sim.detection_range = g.at("detection_range");
  } catch (const json::exception &ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

std::string RunConfig::digest() const {
  json doc = to_json();
  doc.erase("eval");
  doc.erase("checkpoint_interval");
  const std::string text = doc.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) h = (h ^ ch) * 0x100000001b3ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  if (std::all_of(text.begin(), text.end(), [](unsigned char ch) { return std::isspace(ch); })) return RunConfig{};
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error &e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return RunConfig::from_json(doc);
}

} // namespace ma2c
