#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kim/random.hpp"

namespace kim {

enum class EnvId : std::uint8_t { lander, racing };

std::string_view to_string(EnvId e);
EnvId env_from_string(std::string_view s);

/// Flat observation. Lander: 8 features. Racing: `tile_rows` x 8 tile
/// features (row-major) followed by the 7 indicators.
struct Observation {
  std::vector<double> values;
  std::size_t tile_rows = 0;

  std::span<const double> tiles() const { return {values.data(), tile_rows * 8}; }
  std::span<const double> indicators() const {
    return std::span<const double>(values).subspan(tile_rows * 8);
  }
  bool operator==(const Observation&) const = default;
};

// ---------------------------------------------------------------------------
// Lunar lander
// ---------------------------------------------------------------------------

struct LanderConfig {
  double dt = 0.02;
  double gravity = 1.0;
  double main_accel = 1.3;
  double side_torque = 0.8;
  double side_accel = 0.1;
  double leg_half_span = 0.08;
  double leg_length = 0.05;
  int max_steps = 1000;
  // touchdown predicates
  double land_speed = 0.1;
  double land_angle = 0.2;
  double land_x = 0.25;
  double crash_vy = 0.5;
  double crash_angle = 0.4;
  // ground contact response
  double ground_friction = 0.9;
  double ground_angular_damping = 0.5;
  double ground_leveling = 0.5;
};

enum class Terminal : std::uint8_t { none, landed, crashed, timeout };
std::string_view to_string(Terminal t);

struct LanderState {
  double x = 0, y = 0, vx = 0, vy = 0, theta = 0, omega = 0;
  bool left_contact = false, right_contact = false;
  int step_count = 0;
  Terminal terminal = Terminal::none;

  bool operator==(const LanderState&) const = default;
};

LanderState lander_reset(std::uint64_t seed, const LanderConfig& cfg = {});
/// Actions: 0 nothing, 1 left engine, 2 main engine, 3 right engine.
LanderState lander_step(const LanderState& s, int action, const LanderConfig& cfg = {});
Observation lander_observe(const LanderState& s);
int lander_expert(std::span<const double> obs);

// ---------------------------------------------------------------------------
// Car racing
// ---------------------------------------------------------------------------

struct RacingConfig {
  // track
  double track_radius = 30.0;
  double radius_lo = 0.7;
  double radius_hi = 1.3;
  int control_points = 12;
  double tile_length = 1.0;
  double half_width = 2.0;
  double corner_threshold = 0.06;  // on normalized curvature
  // Tracks with a sharper tile are regenerated: the car cannot hold such hairpins.
  double max_tile_curvature = 0.12;
  int max_track_attempts = 10;
  // car
  double dt = 0.05;
  double delta_max = 0.35;
  double servo_rate = 4.0;
  double engine_accel = 6.0;
  double brake_decel = 10.0;
  double drag = 0.12;
  double v_max = 12.0;
  double wheelbase = 2.5;
  double grip = 8.0;
  double slip_speed_loss = 0.985;
  double slip_yaw_gain = 0.3;
  double visit_radius = 1.2;  // in half-widths
  double gyro_scale = 3.0;
  // episodes
  int score_steps = 1000;
  int max_steps = 3000;
};

struct Tile {
  double cx = 0, cy = 0;
  double heading = 0;     // world frame, counter-clockwise radians
  double dx = 0, dy = 0;  // midpoint delta from the previous tile
  double curvature = 0;   // wrapped heading change from the previous tile / pi, right turns positive
  bool corner = false;

  bool operator==(const Tile&) const = default;
};

struct Track {
  std::uint64_t seed = 0;
  double half_width = 2.0;
  double tile_length = 1.0;
  std::vector<Tile> tiles;

  bool operator==(const Track&) const = default;
};

Track racing_make_track(std::uint64_t seed, const RacingConfig& cfg = {});

struct CarState {
  double px = 0, py = 0;
  double psi = 0;  // world heading
  double v = 0;
  double delta = 0;  // steering angle, right positive
  bool slip = false;
  std::array<bool, 4> wheel_abs{};
  double gyro = 0;  // yaw rate, right positive
  std::vector<int> first_visit;  // step of first visit per tile, -1 if never
  std::size_t n_visited = 0;
  int step_count = 0;
};

struct CarAction {
  double steer = 0, gas = 0, brake = 0;
};

CarState racing_reset(const Track& track);
CarState racing_step(const Track& track, const CarState& s, const CarAction& a,
                     const RacingConfig& cfg = {});
Observation racing_observe(const Track& track, const CarState& s, const RacingConfig& cfg = {});
/// Same observation from a pose and an already-built indicator vector.
Observation racing_observe_pose(const Track& track, double px, double py, double psi,
                                std::span<const double> indicators);

struct RacingExpertConfig {
  double steer_heading_gain = 5.0;
  double steer_curvature_gain = 2.5;
  double steer_lateral_gain = 0.5;
  double steer_speed_damping = 0.7;
  double lookahead_base = 1.0;
  double lookahead_speed = 4.0;
  double corner_speed_gain = 0.25;
  double corner_horizon = 30.0;
  double cruise_speed = 0.9;
  double min_corner_speed = 0.3;
  double pedal_gain = 2.0;
  double max_brake = 0.8;
};

CarAction racing_expert(const Observation& obs, const RacingExpertConfig& ecfg = {},
                        const RacingConfig& cfg = {});

// ---------------------------------------------------------------------------
// Outcomes, scoring, noise
// ---------------------------------------------------------------------------

struct Outcome {
  // lander
  bool success = false;
  Terminal terminal = Terminal::none;
  // racing
  double reward = 0.0;
  double coverage = 0.0;
  double max_coverage = 0.0;
  int T = 0;
  // both
  int steps = 0;

  bool operator==(const Outcome&) const = default;
};

/// Coverage and reward from per-tile first-visit steps (-1 = never visited).
Outcome racing_score(std::span<const int> first_visit, const RacingConfig& cfg = {});

/// Adds noise_level * N(0, 1) per dimension, then clips to the action box.
CarAction corrupt_action(const CarAction& a, double noise_level, Rng& rng);
/// Discrete actions cannot be corrupted; always throws ContractViolation.
int corrupt_action(int action, double noise_level, Rng& rng);

CarAction clip_action(const CarAction& a);

// ---------------------------------------------------------------------------
// Episodes and demonstrations
// ---------------------------------------------------------------------------

struct Transition {
  Observation obs;
  std::vector<double> action;  // lander: {index}; racing: {steer, gas, brake}
  std::array<double, 3> pose{};  // racing: car px, py, psi

  bool operator==(const Transition&) const = default;
};

struct Episode {
  EnvId env = EnvId::lander;
  std::uint64_t seed = 0;
  Track track;  // racing only
  std::vector<Transition> transitions;
  Outcome outcome;

  bool operator==(const Episode&) const = default;
};

enum class DemoFilter : std::uint8_t { keep_successful, keep_all };

struct EnvConfig {
  LanderConfig lander;
  RacingConfig racing;
  RacingExpertConfig racing_expert;
  /// Optional corruption of expert actions while recording racing demos.
  double demo_noise = 0.0;
};

/// Expert episode for one seed. Racing demos stop after a full lap or
/// `score_steps` steps.
Episode expert_episode(EnvId env, std::uint64_t seed, const EnvConfig& cfg = {});

std::vector<Episode> collect_demos(EnvId env, std::size_t n_episodes, DemoFilter filter,
                                   std::uint64_t seed, const EnvConfig& cfg = {});

/// JSON Lines: header, one line per transition, outcome trailer. Racing
/// headers carry the track; racing transitions store the indicators and car
/// pose, and the tile block is rebuilt on load.
std::string episodes_to_jsonl(std::span<const Episode> episodes);
std::vector<Episode> episodes_from_jsonl(std::string_view text);
void write_episodes(const std::string& path, std::span<const Episode> episodes);
std::vector<Episode> read_episodes(const std::string& path);

/// JSON array of tiles for plotting.
std::string track_to_json(const Track& track);

}  // namespace kim
