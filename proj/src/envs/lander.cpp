#include <algorithm>
#include <cmath>

#include "kim/envs.hpp"
#include "kim/error.hpp"

namespace kim {

std::string_view to_string(EnvId e) { return e == EnvId::lander ? "lander" : "racing"; }

EnvId env_from_string(std::string_view s) {
  if (s == "lander") return EnvId::lander;
  if (s == "racing") return EnvId::racing;
  throw ConfigError("unknown environment '" + std::string(s) + "' (expected lander or racing)");
}

std::string_view to_string(Terminal t) {
  switch (t) {
    case Terminal::none:
      return "none";
    case Terminal::landed:
      return "landed";
    case Terminal::crashed:
      return "crashed";
    case Terminal::timeout:
      return "timeout";
  }
  return "none";
}

LanderState lander_reset(std::uint64_t seed, const LanderConfig&) {
  Rng rng(seed);
  LanderState s;
  s.x = uniform(rng, -0.3, 0.3);
  s.y = 1.2;
  s.vx = uniform(rng, -0.2, 0.2);
  s.vy = uniform(rng, -0.3, 0.0);
  s.theta = uniform(rng, -0.15, 0.15);
  s.omega = uniform(rng, -0.1, 0.1);
  return s;
}

namespace {

// World height of a leg tip at body offset (dx, -leg_length).
double tip_height(const LanderState& s, double dx, const LanderConfig& cfg) {
  return s.y + dx * std::sin(s.theta) - cfg.leg_length * std::cos(s.theta);
}

}  // namespace

LanderState lander_step(const LanderState& in, int action, const LanderConfig& cfg) {
  if (in.terminal != Terminal::none) {
    throw ContractViolation("lander_step on a terminal state (" +
                            std::string(to_string(in.terminal)) + ")");
  }
  if (action < 0 || action > 3) {
    throw ContractViolation("lander action " + std::to_string(action) + " outside 0..3");
  }
  LanderState s = in;
  const double c = std::cos(s.theta), sn = std::sin(s.theta);
  double ax = 0.0, ay = -cfg.gravity, alpha = 0.0;
  if (action == 2) {
    ax += -cfg.main_accel * sn;
    ay += cfg.main_accel * c;
  } else if (action == 1 || action == 3) {
    const double dir = action == 1 ? 1.0 : -1.0;
    alpha += dir * cfg.side_torque;
    ax += dir * cfg.side_accel * c;
    ay += dir * cfg.side_accel * sn;
  }
  s.vx += ax * cfg.dt;
  s.vy += ay * cfg.dt;
  s.omega += alpha * cfg.dt;
  s.x += s.vx * cfg.dt;
  s.y += s.vy * cfg.dt;
  s.theta += s.omega * cfg.dt;
  ++s.step_count;

  const double hl = tip_height(s, -cfg.leg_half_span, cfg);
  const double hr = tip_height(s, cfg.leg_half_span, cfg);
  s.left_contact = hl <= 0.0;
  s.right_contact = hr <= 0.0;
  const bool contact = s.left_contact || s.right_contact;

  if (contact) {
    // Touchdown is judged on the incoming velocity.
    if (std::fabs(s.vy) > cfg.crash_vy || std::fabs(s.theta) > cfg.crash_angle) {
      s.terminal = Terminal::crashed;
      return s;
    }
    s.vy = std::max(s.vy, 0.0);
    s.vx *= cfg.ground_friction;
    s.omega *= cfg.ground_angular_damping;
    s.theta *= cfg.ground_leveling;
    // Rest the lowest tip on the ground after leveling so it keeps its contact.
    s.y -= std::min(tip_height(s, -cfg.leg_half_span, cfg), tip_height(s, cfg.leg_half_span, cfg));
    s.left_contact = tip_height(s, -cfg.leg_half_span, cfg) <= 1e-12;
    s.right_contact = tip_height(s, cfg.leg_half_span, cfg) <= 1e-12;
  } else if (s.y <= 0.0) {
    s.terminal = Terminal::crashed;
    return s;
  }

  if (s.left_contact && s.right_contact && std::fabs(s.vx) <= cfg.land_speed &&
      std::fabs(s.vy) <= cfg.land_speed && std::fabs(s.theta) <= cfg.land_angle &&
      std::fabs(s.x) <= cfg.land_x) {
    s.terminal = Terminal::landed;
  } else if (s.step_count >= cfg.max_steps) {
    s.terminal = Terminal::timeout;
  }
  return s;
}

Observation lander_observe(const LanderState& s) {
  return {{s.x, s.y, s.vx, s.vy, s.theta, s.omega, s.left_contact ? 1.0 : 0.0,
           s.right_contact ? 1.0 : 0.0},
          0};
}

int lander_expert(std::span<const double> o) {
  // Position and descent gains are stiffer than the Gymnasium heuristic's: the
  // main engine here only has 0.3 g of spare thrust.
  const double angle_targ = std::clamp(1.5 * o[0] + 3.0 * o[2], -0.4, 0.4);
  const double hover_targ = 0.55 * std::fabs(o[0]);
  double angle_todo = 0.5 * (angle_targ - o[4]) - 1.0 * o[5];
  double hover_todo = 0.5 * (hover_targ - o[1]) - 0.75 * o[3];
  if (o[6] != 0.0 || o[7] != 0.0) {
    angle_todo = 0.0;
    hover_todo = -0.5 * o[3];
  }
  if (hover_todo > std::fabs(angle_todo) && hover_todo > 0.05) return 2;
  if (angle_todo > 0.05) return 1;
  if (angle_todo < -0.05) return 3;
  return 0;
}

}  // namespace kim
