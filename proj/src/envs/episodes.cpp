#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kim/envs.hpp"
#include "kim/error.hpp"

namespace kim {

using nlohmann::json;

Outcome racing_score(std::span<const int> first_visit, const RacingConfig& cfg) {
  Outcome o;
  const auto n = first_visit.size();
  if (n == 0) throw ContractViolation("racing_score on an empty track");
  std::size_t within = 0, ever = 0;
  int last = -1;
  bool all = true;
  for (int step : first_visit) {
    if (step < 0) {
      all = false;
      continue;
    }
    if (step <= cfg.score_steps) ++within;
    if (step <= cfg.max_steps) ++ever;
    last = std::max(last, step);
  }
  o.coverage = static_cast<double>(within) / static_cast<double>(n);
  o.max_coverage = static_cast<double>(ever) / static_cast<double>(n);
  o.T = all && last <= cfg.score_steps ? last : cfg.score_steps;
  o.reward = 1000.0 * o.coverage - 0.1 * o.T;
  return o;
}

CarAction clip_action(const CarAction& a) {
  return {std::clamp(a.steer, -1.0, 1.0), std::clamp(a.gas, 0.0, 1.0),
          std::clamp(a.brake, 0.0, 1.0)};
}

CarAction corrupt_action(const CarAction& a, double noise_level, Rng& rng) {
  if (!(noise_level >= 0.0)) throw ContractViolation("noise level must be non-negative");
  if (noise_level == 0.0) return clip_action(a);
  std::normal_distribution<double> z(0.0, 1.0);
  CarAction out = a;
  out.steer += noise_level * z(rng);
  out.gas += noise_level * z(rng);
  out.brake += noise_level * z(rng);
  return clip_action(out);
}

int corrupt_action(int, double, Rng&) {
  throw ContractViolation("action noise applies to continuous actions only");
}

// ---------------------------------------------------------------------------

Episode expert_episode(EnvId env, std::uint64_t seed, const EnvConfig& cfg) {
  Episode ep;
  ep.env = env;
  ep.seed = seed;
  if (env == EnvId::lander) {
    LanderState s = lander_reset(seed, cfg.lander);
    while (s.terminal == Terminal::none) {
      Observation obs = lander_observe(s);
      const int a = lander_expert(obs.values);
      ep.transitions.push_back({std::move(obs), {static_cast<double>(a)}, {}});
      s = lander_step(s, a, cfg.lander);
    }
    ep.outcome.terminal = s.terminal;
    ep.outcome.success = s.terminal == Terminal::landed;
    ep.outcome.steps = s.step_count;
    return ep;
  }

  ep.track = racing_make_track(seed, cfg.racing);
  CarState s = racing_reset(ep.track);
  Rng noise(derive_seed(seed, "demo-noise"));
  while (s.n_visited < ep.track.tiles.size() && s.step_count < cfg.racing.score_steps) {
    Observation obs = racing_observe(ep.track, s, cfg.racing);
    CarAction a = racing_expert(obs, cfg.racing_expert, cfg.racing);
    if (cfg.demo_noise > 0.0) a = corrupt_action(a, cfg.demo_noise, noise);
    ep.transitions.push_back({std::move(obs), {a.steer, a.gas, a.brake}, {s.px, s.py, s.psi}});
    s = racing_step(ep.track, s, a, cfg.racing);
  }
  ep.outcome = racing_score(s.first_visit, cfg.racing);
  ep.outcome.steps = s.step_count;
  return ep;
}

std::vector<Episode> collect_demos(EnvId env, std::size_t n_episodes, DemoFilter filter,
                                   std::uint64_t seed, const EnvConfig& cfg) {
  if (n_episodes == 0) throw ContractViolation("collect_demos needs n_episodes > 0");
  std::vector<Episode> out;
  const bool filtered = env == EnvId::lander && filter == DemoFilter::keep_successful;
  const std::size_t limit = filtered ? 20 * n_episodes : n_episodes;
  std::size_t attempts = 0;
  while (out.size() < n_episodes && attempts < limit) {
    Episode ep = expert_episode(env, derive_seed(seed, "demo", attempts), cfg);
    ++attempts;
    if (!filtered || ep.outcome.success) out.push_back(std::move(ep));
  }
  if (out.size() < n_episodes) {
    std::ostringstream msg;
    msg << "only " << out.size() << " successful expert episodes in " << attempts
        << " attempts (success rate " << static_cast<double>(out.size()) / static_cast<double>(attempts)
        << ")";
    throw ContractViolation(msg.str());
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr int kLayoutVersion = 1;

json tile_json(const Tile& t) {
  return {{"cx", t.cx},     {"cy", t.cy},   {"heading", t.heading},     {"dx", t.dx},
          {"dy", t.dy},     {"curvature", t.curvature}, {"corner", t.corner}};
}

Tile tile_from(const json& j) {
  Tile t;
  t.cx = j.at("cx").get<double>();
  t.cy = j.at("cy").get<double>();
  t.heading = j.at("heading").get<double>();
  t.dx = j.at("dx").get<double>();
  t.dy = j.at("dy").get<double>();
  t.curvature = j.at("curvature").get<double>();
  t.corner = j.at("corner").get<bool>();
  return t;
}

json track_json(const Track& t) {
  json tiles = json::array();
  for (const auto& tile : t.tiles) tiles.push_back(tile_json(tile));
  return {{"seed", t.seed}, {"half_width", t.half_width}, {"tile_length", t.tile_length},
          {"tiles", std::move(tiles)}};
}

json outcome_json(const Outcome& o, EnvId env) {
  json j{{"type", "outcome"}, {"steps", o.steps}};
  if (env == EnvId::lander) {
    j["success"] = o.success;
    j["terminal"] = std::string(to_string(o.terminal));
  } else {
    j["reward"] = o.reward;
    j["coverage"] = o.coverage;
    j["max_coverage"] = o.max_coverage;
    j["T"] = o.T;
  }
  return j;
}

Terminal terminal_from(const std::string& s) {
  for (auto t : {Terminal::none, Terminal::landed, Terminal::crashed, Terminal::timeout}) {
    if (to_string(t) == s) return t;
  }
  throw ContractViolation("unknown terminal '" + s + "'");
}

}  // namespace

std::string episodes_to_jsonl(std::span<const Episode> episodes) {
  std::string out;
  for (const auto& ep : episodes) {
    json h{{"type", "header"}, {"env", std::string(to_string(ep.env))}, {"seed", ep.seed},
           {"layout", kLayoutVersion}};
    if (ep.env == EnvId::racing) h["track"] = track_json(ep.track);
    out += h.dump() + "\n";
    for (const auto& t : ep.transitions) {
      json j;
      if (ep.env == EnvId::lander) {
        j["obs"] = t.obs.values;
        j["act"] = static_cast<int>(t.action.at(0));
      } else {
        j["obs"] = std::vector<double>(t.obs.indicators().begin(), t.obs.indicators().end());
        j["pose"] = t.pose;
        j["act"] = t.action;
      }
      out += j.dump() + "\n";
    }
    out += outcome_json(ep.outcome, ep.env).dump() + "\n";
  }
  return out;
}

std::vector<Episode> episodes_from_jsonl(std::string_view text) {
  std::vector<Episode> out;
  Episode* cur = nullptr;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const json j = json::parse(line);
      const auto type = j.value("type", std::string());
      if (type == "header") {
        if (j.at("layout").get<int>() != kLayoutVersion) {
          throw ContractViolation("unsupported layout version");
        }
        out.emplace_back();
        cur = &out.back();
        cur->env = env_from_string(j.at("env").get<std::string>());
        cur->seed = j.at("seed").get<std::uint64_t>();
        if (cur->env == EnvId::racing) {
          const auto& t = j.at("track");
          cur->track.seed = t.at("seed").get<std::uint64_t>();
          cur->track.half_width = t.at("half_width").get<double>();
          cur->track.tile_length = t.at("tile_length").get<double>();
          for (const auto& tile : t.at("tiles")) cur->track.tiles.push_back(tile_from(tile));
        }
      } else if (!cur) {
        throw ContractViolation("record before episode header");
      } else if (type == "outcome") {
        Outcome& o = cur->outcome;
        o.steps = j.at("steps").get<int>();
        if (cur->env == EnvId::lander) {
          o.success = j.at("success").get<bool>();
          o.terminal = terminal_from(j.at("terminal").get<std::string>());
        } else {
          o.reward = j.at("reward").get<double>();
          o.coverage = j.at("coverage").get<double>();
          o.max_coverage = j.at("max_coverage").get<double>();
          o.T = j.at("T").get<int>();
        }
        cur = nullptr;
      } else {
        Transition t;
        if (cur->env == EnvId::lander) {
          t.obs.values = j.at("obs").get<std::vector<double>>();
          if (t.obs.values.size() != 8) throw ContractViolation("lander observation must have 8 values");
          t.action = {static_cast<double>(j.at("act").get<int>())};
        } else {
          const auto ind = j.at("obs").get<std::vector<double>>();
          if (ind.size() != 7) throw ContractViolation("racing indicators must have 7 values");
          t.pose = j.at("pose").get<std::array<double, 3>>();
          t.action = j.at("act").get<std::vector<double>>();
          if (t.action.size() != 3) throw ContractViolation("racing action must have 3 values");
          t.obs = racing_observe_pose(cur->track, t.pose[0], t.pose[1], t.pose[2], ind);
        }
        cur->transitions.push_back(std::move(t));
      }
    } catch (const json::exception& e) {
      throw ContractViolation("episode line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ContractViolation& e) {
      throw ContractViolation("episode line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (cur) throw ContractViolation("episode stream ends without an outcome record");
  for (const auto& ep : out) {
    if (ep.transitions.empty()) throw ContractViolation("episode with no transitions");
  }
  return out;
}

void write_episodes(const std::string& path, std::span<const Episode> episodes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << episodes_to_jsonl(episodes);
  if (!f) throw IoError("failed writing '" + path + "'");
}

std::vector<Episode> read_episodes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return episodes_from_jsonl(ss.str());
}

std::string track_to_json(const Track& track) {
  json tiles = json::array();
  for (const auto& t : track.tiles) tiles.push_back(tile_json(t));
  return tiles.dump();
}

}  // namespace kim
