#include <algorithm>
#include <cmath>
#include <numbers>

#include "kim/envs.hpp"
#include "kim/error.hpp"

namespace kim {

namespace {

constexpr double kPi = std::numbers::pi;

double wrap(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  return a - kPi;
}

struct P2 {
  double x, y;
};

// Centripetal Catmull-Rom (alpha = 0.5) between p1 and p2; unlike the uniform
// variant it cannot form cusps when neighbouring control points are unevenly spaced.
P2 catmull_rom(const P2& p0, const P2& p1, const P2& p2, const P2& p3, double u) {
  auto knot = [](const P2& a, const P2& b) {
    return std::sqrt(std::hypot(b.x - a.x, b.y - a.y));
  };
  const double t0 = 0.0;
  const double t1 = t0 + knot(p0, p1);
  const double t2 = t1 + knot(p1, p2);
  const double t3 = t2 + knot(p2, p3);
  const double t = t1 + u * (t2 - t1);
  auto lerp = [](const P2& a, const P2& b, double ta, double tb, double x) {
    const double w = (x - ta) / (tb - ta);
    return P2{a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)};
  };
  const P2 a1 = lerp(p0, p1, t0, t1, t), a2 = lerp(p1, p2, t1, t2, t), a3 = lerp(p2, p3, t2, t3, t);
  const P2 b1 = lerp(a1, a2, t0, t2, t), b2 = lerp(a2, a3, t1, t3, t);
  return lerp(b1, b2, t1, t2, t);
}

double cross(P2 a, P2 b, P2 c) { return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x); }

bool segments_cross(P2 a, P2 b, P2 c, P2 d) {
  const double d1 = cross(c, d, a), d2 = cross(c, d, b);
  const double d3 = cross(a, b, c), d4 = cross(a, b, d);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0));
}

// Tile polygon from one set of control radii; empty when degenerate.
std::vector<Tile> build_tiles(std::uint64_t seed, const RacingConfig& cfg) {
  Rng rng(seed);
  const int k = cfg.control_points;
  std::vector<P2> ctrl(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    // Clockwise placement, so the car turns right on average.
    const double a = -2.0 * kPi * i / k;
    const double r = uniform(rng, cfg.radius_lo, cfg.radius_hi) * cfg.track_radius;
    ctrl[static_cast<std::size_t>(i)] = {r * std::cos(a), r * std::sin(a)};
  }

  constexpr int kSub = 200;
  std::vector<P2> dense;
  dense.reserve(static_cast<std::size_t>(k * kSub) + 1);
  for (int i = 0; i < k; ++i) {
    auto at = [&](int j) { return ctrl[static_cast<std::size_t>(((j % k) + k) % k)]; };
    for (int s = 0; s < kSub; ++s) {
      dense.push_back(catmull_rom(at(i - 1), at(i), at(i + 1), at(i + 2),
                                  static_cast<double>(s) / kSub));
    }
  }
  dense.push_back(dense.front());

  std::vector<double> cum(dense.size(), 0.0);
  for (std::size_t i = 1; i < dense.size(); ++i) {
    cum[i] = cum[i - 1] + std::hypot(dense[i].x - dense[i - 1].x, dense[i].y - dense[i - 1].y);
  }
  const double total = cum.back();
  const auto n = static_cast<std::size_t>(std::llround(total / cfg.tile_length));
  if (n < 8) return {};
  const double step = total / static_cast<double>(n);

  std::vector<P2> pts(n);
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = step * static_cast<double>(i);
    while (j + 1 < dense.size() && cum[j + 1] < s) ++j;
    const double span = cum[j + 1] - cum[j];
    const double t = span > 0 ? (s - cum[j]) / span : 0.0;
    pts[i] = {dense[j].x + t * (dense[j + 1].x - dense[j].x),
              dense[j].y + t * (dense[j + 1].y - dense[j].y)};
  }

  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 2; b < n; ++b) {
      if (a == 0 && b == n - 1) continue;
      if (segments_cross(pts[a], pts[(a + 1) % n], pts[b], pts[(b + 1) % n])) return {};
    }
  }

  std::vector<Tile> tiles(n);
  for (std::size_t i = 0; i < n; ++i) {
    const P2 p = pts[i], q = pts[(i + 1) % n], prev = pts[(i + n - 1) % n];
    tiles[i].cx = p.x;
    tiles[i].cy = p.y;
    tiles[i].heading = std::atan2(q.y - p.y, q.x - p.x);
    tiles[i].dx = p.x - prev.x;
    tiles[i].dy = p.y - prev.y;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = -wrap(tiles[i].heading - tiles[(i + n - 1) % n].heading) / kPi;
    tiles[i].curvature = d;
    tiles[i].corner = std::fabs(d) > cfg.corner_threshold;
    sum += d;
  }
  if (std::fabs(sum * kPi - 2.0 * kPi) > 1e-6) return {};
  for (const auto& t : tiles) {
    if (std::fabs(t.curvature) > cfg.max_tile_curvature) return {};
  }
  return tiles;
}

}  // namespace

Track racing_make_track(std::uint64_t seed, const RacingConfig& cfg) {
  for (int attempt = 0; attempt < cfg.max_track_attempts; ++attempt) {
    const auto sub = attempt == 0 ? seed : derive_seed(seed, "track", static_cast<std::uint64_t>(attempt));
    auto tiles = build_tiles(sub, cfg);
    if (!tiles.empty()) {
      Track t;
      t.seed = seed;
      t.half_width = cfg.half_width;
      t.tile_length = cfg.tile_length;
      t.tiles = std::move(tiles);
      return t;
    }
  }
  throw ContractViolation("track seed " + std::to_string(seed) + ": no simple, drivable closed track after " +
                          std::to_string(cfg.max_track_attempts) + " attempts");
}

namespace {

void mark_visits(const Track& track, CarState& s, double radius) {
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < track.tiles.size(); ++i) {
    if (s.first_visit[i] >= 0) continue;
    const double dx = track.tiles[i].cx - s.px, dy = track.tiles[i].cy - s.py;
    if (dx * dx + dy * dy <= r2) {
      s.first_visit[i] = s.step_count;
      ++s.n_visited;
    }
  }
}

}  // namespace

CarState racing_reset(const Track& track) {
  if (track.tiles.empty()) throw ContractViolation("racing_reset on an empty track");
  CarState s;
  s.px = track.tiles[0].cx;
  s.py = track.tiles[0].cy;
  s.psi = track.tiles[0].heading;
  s.first_visit.assign(track.tiles.size(), -1);
  s.first_visit[0] = 0;
  s.n_visited = 1;
  return s;
}

CarState racing_step(const Track& track, const CarState& in, const CarAction& a,
                     const RacingConfig& cfg) {
  CarState s = in;
  const double dt = cfg.dt;
  s.delta += cfg.servo_rate * (a.steer * cfg.delta_max - s.delta) * dt;
  s.delta = std::clamp(s.delta, -cfg.delta_max, cfg.delta_max);
  s.v += (cfg.engine_accel * a.gas - cfg.brake_decel * a.brake - cfg.drag * s.v) * dt;
  s.v = std::clamp(s.v, 0.0, cfg.v_max);

  const double w_cmd = (s.v / cfg.wheelbase) * std::tan(s.delta);
  const double a_lat = std::fabs(s.v * w_cmd);
  double w_eff = w_cmd;
  double extra = 0.0;
  if (a_lat > cfg.grip) {
    w_eff = w_cmd * cfg.grip / a_lat;
    s.v *= cfg.slip_speed_loss;
    const double sign = w_cmd > 0 ? 1.0 : -1.0;
    extra = cfg.slip_yaw_gain * sign * (a_lat / cfg.grip - 1.0) * dt;
    s.slip = true;
    s.wheel_abs.fill(a.brake > 0.0);
  } else {
    s.slip = false;
    s.wheel_abs.fill(false);
  }
  // Right-positive yaw turns the world heading clockwise.
  s.psi -= w_eff * dt + extra;
  s.gyro = w_eff;
  s.px += s.v * std::cos(s.psi) * dt;
  s.py += s.v * std::sin(s.psi) * dt;
  ++s.step_count;
  mark_visits(track, s, cfg.visit_radius * track.half_width);
  return s;
}

Observation racing_observe_pose(const Track& track, double px, double py, double psi,
                                std::span<const double> indicators) {
  const auto n = track.tiles.size();
  std::size_t nearest = 0;
  double best = INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = track.tiles[i].cx - px, dy = track.tiles[i].cy - py;
    const double d = dx * dx + dy * dy;
    if (d < best) {
      best = d;
      nearest = i;
    }
  }
  const double c = std::cos(psi), sn = std::sin(psi);
  Observation o;
  o.tile_rows = n;
  o.values.resize(n * 8 + indicators.size());
  for (std::size_t k = 0; k < n; ++k) {
    const Tile& t = track.tiles[(nearest + k) % n];
    const double rx = t.cx - px, ry = t.cy - py;
    double* row = &o.values[k * 8];
    row[0] = -sn * rx + c * ry;  // left of the car is positive
    row[1] = c * rx + sn * ry;
    row[2] = -sn * t.dx + c * t.dy;
    row[3] = c * t.dx + sn * t.dy;
    row[4] = -wrap(t.heading - psi);
    row[5] = t.corner ? 1.0 : 0.0;
    row[6] = t.curvature;
    row[7] = 0.0;
  }
  std::copy(indicators.begin(), indicators.end(), o.values.begin() + static_cast<std::ptrdiff_t>(n * 8));
  return o;
}

Observation racing_observe(const Track& track, const CarState& s, const RacingConfig& cfg) {
  const std::array<double, 7> ind{s.v / cfg.v_max,
                                  s.delta / cfg.delta_max,
                                  s.gyro / cfg.gyro_scale,
                                  s.wheel_abs[0] ? 1.0 : 0.0,
                                  s.wheel_abs[1] ? 1.0 : 0.0,
                                  s.wheel_abs[2] ? 1.0 : 0.0,
                                  s.wheel_abs[3] ? 1.0 : 0.0};
  return racing_observe_pose(track, s.px, s.py, s.psi, ind);
}

CarAction racing_expert(const Observation& obs, const RacingExpertConfig& e,
                        const RacingConfig& cfg) {
  const auto tiles = obs.tiles();
  const auto ind = obs.indicators();
  const std::size_t n = obs.tile_rows;
  const double v = ind[0];
  auto row = [&](std::size_t k) { return tiles.subspan(k * 8, 8); };

  const double look = e.lookahead_base + e.lookahead_speed * v;
  std::size_t target = n - 1;
  for (std::size_t k = 0; k < n; ++k) {
    if (row(k)[1] >= look) {
      target = k;
      break;
    }
  }
  const double heading_err = row(target)[4];
  double curv = 0.0;
  const std::size_t m = std::min<std::size_t>(10, n);
  for (std::size_t k = 0; k < m; ++k) curv += row(k)[6];
  curv /= static_cast<double>(m);
  const double lateral = row(0)[0] / cfg.half_width;

  CarAction a;
  a.steer = std::clamp((e.steer_heading_gain * heading_err + e.steer_curvature_gain * curv -
                        e.steer_lateral_gain * lateral) *
                           (1.0 - e.steer_speed_damping * v),
                       -1.0, 1.0);

  double v_targ = e.cruise_speed;
  const double bonus = 2.0 * cfg.brake_decel * e.max_brake / (cfg.v_max * cfg.v_max);
  const auto horizon = std::min(n, static_cast<std::size_t>(e.corner_horizon / cfg.tile_length) + 1);
  for (std::size_t k = 0; k < horizon; ++k) {
    const auto r = row(k);
    if (r[5] == 0.0) continue;
    const double vc = e.corner_speed_gain / std::sqrt(std::fabs(r[6]));
    // Farther corners allow more speed: the car can still brake in time.
    const double dist = static_cast<double>(k) * cfg.tile_length;
    const double allowed = std::sqrt(vc * vc + bonus * dist);
    v_targ = std::min(v_targ, std::clamp(allowed, e.min_corner_speed, 1.0));
  }
  a.gas = std::clamp(e.pedal_gain * (v_targ - v), 0.0, 1.0);
  a.brake = std::clamp(e.pedal_gain * (v - v_targ), 0.0, e.max_brake);
  if (a.gas >= a.brake) {
    a.brake = 0.0;
  } else {
    a.gas = 0.0;
  }
  return a;
}

}  // namespace kim
