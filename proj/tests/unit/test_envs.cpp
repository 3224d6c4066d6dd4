#include <doctest.h>

#include <cmath>
#include <numbers>

#include "kim/envs.hpp"
#include "kim/error.hpp"

using namespace kim;

namespace {

// Straight row of tiles ahead of the car, one unit apart.
Observation straight_obs(std::size_t n, double v_norm) {
  Observation o;
  o.tile_rows = n;
  o.values.assign(n * 8 + 7, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    o.values[k * 8 + 1] = static_cast<double>(k);
    o.values[k * 8 + 3] = 1.0;
  }
  o.values[n * 8] = v_norm;
  return o;
}

LanderState airborne() {
  LanderState s;
  s.y = 1.0;
  return s;
}

}  // namespace

TEST_SUITE("envs") {

TEST_CASE("lander reset") {
  const auto a = lander_reset(7), b = lander_reset(7), c = lander_reset(8);
  CHECK(a == b);
  CHECK(a.x != c.x);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto r = lander_reset(s);
    CHECK(r.terminal == Terminal::none);
    CHECK_FALSE(r.left_contact);
    CHECK_FALSE(r.right_contact);
    CHECK(r.y == 1.2);
    CHECK(std::fabs(r.x) <= 0.3);
    CHECK(r.vy <= 0.0);
  }
}

TEST_CASE("lander step examples") {
  const auto s0 = lander_step(airborne(), 0);
  CHECK(s0.vy == doctest::Approx(-0.02).epsilon(1e-12));
  const auto s1 = lander_step(s0, 0);
  CHECK(s1.y < s0.y);

  const auto m = lander_step(airborne(), 2);
  CHECK(m.vy == doctest::Approx((1.3 - 1.0) * 0.02).epsilon(1e-12));

  // left engine turns left, right engine turns right
  CHECK(lander_step(airborne(), 1).omega > 0.0);
  CHECK(lander_step(airborne(), 3).omega < 0.0);
}

TEST_CASE("terminal states refuse further steps") {
  auto s = lander_reset(3);
  while (s.terminal == Terminal::none) s = lander_step(s, 0);
  CHECK(s.terminal != Terminal::landed);
  CHECK_THROWS_AS(lander_step(s, 0), ContractViolation);
}

TEST_CASE("no-op episodes never land") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = lander_reset(seed);
    while (s.terminal == Terminal::none) s = lander_step(s, 0);
    CHECK((s.terminal == Terminal::crashed || s.terminal == Terminal::timeout));
  }
}

TEST_CASE("free-fall energy is non-increasing") {
  const LanderConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = lander_reset(seed);
    auto energy = [&](const LanderState& t) { return 0.5 * (t.vx * t.vx + t.vy * t.vy) + cfg.gravity * t.y; };
    while (s.terminal == Terminal::none) {
      const auto next = lander_step(s, 0);
      if (next.left_contact || next.right_contact || next.terminal != Terminal::none) break;
      CHECK(energy(next) <= energy(s) + 1e-3);
      s = next;
    }
  }
}

TEST_CASE("lander observe") {
  auto s = lander_reset(1);
  const auto o = lander_observe(s);
  REQUIRE(o.values.size() == 8);
  CHECK(o.values[0] == s.x);
  CHECK(o.values[3] == s.vy);
  CHECK(o.values[6] == 0.0);
  s.left_contact = true;
  CHECK(lander_observe(s).values[6] == 1.0);
}

TEST_CASE("lander expert examples") {
  std::vector<double> obs(8, 0.0);
  CHECK(lander_expert(obs) == 0);
  obs[3] = -1.0;
  obs[6] = obs[7] = 1.0;
  CHECK(lander_expert(obs) == 2);
  std::vector<double> tilt(8, 0.0);
  tilt[4] = -0.3;
  CHECK(lander_expert(tilt) == 1);
}

TEST_CASE("lander expert lands most episodes") {
  int landed = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) landed += expert_episode(EnvId::lander, seed).outcome.success;
  CHECK(landed >= 40);
}

TEST_CASE("track construction") {
  const RacingConfig cfg;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto t = racing_make_track(seed);
    CHECK(t == racing_make_track(seed));
    REQUIRE(t.tiles.size() > 100);
    double sum = 0.0;
    for (const auto& tile : t.tiles) {
      sum += tile.curvature * std::numbers::pi;
      CHECK(tile.corner == (std::fabs(tile.curvature) > cfg.corner_threshold));
      CHECK(std::fabs(std::hypot(tile.dx, tile.dy) - cfg.tile_length) < 0.05);
    }
    CHECK(std::fabs(std::fabs(sum) - 2 * std::numbers::pi) < 1e-6);
    const auto& first = t.tiles.front();
    const auto& last = t.tiles.back();
    CHECK(std::hypot(last.cx + first.dx - first.cx, last.cy + first.dy - first.cy) < 1e-6);
  }
}

TEST_CASE("constant radius gives a circle without corners") {
  RacingConfig cfg;
  cfg.radius_lo = cfg.radius_hi = 1.0;
  const auto t = racing_make_track(5, cfg);
  // A spline through points on a circle is only close to a circle: the
  // curvature ripples between control points but keeps its sign.
  const double mean_turn = 2.0 / static_cast<double>(t.tiles.size());
  for (const auto& tile : t.tiles) {
    CHECK_FALSE(tile.corner);
    CHECK(tile.curvature > 0.5 * mean_turn);
    CHECK(tile.curvature < 1.5 * mean_turn);
  }
}

TEST_CASE("racing reset and observe") {
  const auto track = racing_make_track(2);
  const auto s = racing_reset(track);
  CHECK(s.px == track.tiles[0].cx);
  CHECK(s.py == track.tiles[0].cy);
  CHECK(s.v == 0.0);
  CHECK(s.n_visited == 1);
  CHECK(racing_score(s.first_visit).coverage == doctest::Approx(1.0 / static_cast<double>(track.tiles.size())));

  const auto o = racing_observe(track, s);
  REQUIRE(o.tile_rows == track.tiles.size());
  REQUIRE(o.indicators().size() == 7);
  CHECK(std::fabs(o.tiles()[0]) < 1e-12);
  CHECK(std::fabs(o.tiles()[1]) < 1e-12);
  CHECK(std::fabs(o.tiles()[4]) < 1e-12);

  auto fast = s;
  fast.v = RacingConfig{}.v_max;
  CHECK(racing_observe(track, fast).indicators()[0] == 1.0);
}

TEST_CASE("racing step examples") {
  const auto track = racing_make_track(4);
  const auto s = racing_reset(track);
  const auto g = racing_step(track, s, {0, 1, 0});
  CHECK(g.v == doctest::Approx(6.0 * 0.05).epsilon(1e-12));

  const auto turn = racing_step(track, s, {1, 0, 0});
  CHECK(turn.px == s.px);
  CHECK(turn.py == s.py);
  CHECK(turn.psi == s.psi);

  auto fast = s;
  fast.v = RacingConfig{}.v_max;
  fast.delta = RacingConfig{}.delta_max;
  CHECK(racing_step(track, fast, {1, 0, 0}).slip);

  // visits only ever accumulate
  auto c = s;
  for (int i = 0; i < 200; ++i) {
    const auto n = racing_step(track, c, racing_expert(racing_observe(track, c)));
    for (std::size_t k = 0; k < n.first_visit.size(); ++k) {
      if (c.first_visit[k] >= 0) CHECK(n.first_visit[k] == c.first_visit[k]);
    }
    CHECK(n.n_visited >= c.n_visited);
    CHECK(n.v >= 0.0);
    c = n;
  }
}

TEST_CASE("racing expert examples") {
  const auto rest = racing_expert(straight_obs(40, 0.0));
  CHECK(rest.steer == 0.0);
  CHECK(rest.gas > 0.0);
  CHECK(rest.brake == 0.0);

  auto corner = straight_obs(40, 0.9);
  corner.values[5] = 1.0;
  corner.values[6] = 0.12;
  const auto c = racing_expert(corner);
  CHECK(c.brake > 0.0);
  CHECK(c.gas == 0.0);

  // steering attenuation with speed
  double prev = 2.0;
  for (int i = 0; i <= 10; ++i) {
    auto o = straight_obs(40, i / 10.0);
    for (std::size_t k = 0; k < 40; ++k) o.values[k * 8 + 4] = 0.1;
    const double s = std::fabs(racing_expert(o).steer);
    CHECK(s <= prev);
    prev = s;
  }
  auto slow = straight_obs(40, 0.0), fast = straight_obs(40, 1.0);
  for (std::size_t k = 0; k < 40; ++k) slow.values[k * 8 + 4] = fast.values[k * 8 + 4] = 0.1;
  CHECK(std::fabs(racing_expert(fast).steer) == doctest::Approx(0.3 * std::fabs(racing_expert(slow).steer)));
}

TEST_CASE("racing score") {
  std::vector<int> fv(1000, 0);
  fv[999] = 1000;
  CHECK(racing_score(fv).reward == 900.0);
  fv[999] = 800;
  CHECK(racing_score(fv).reward == 920.0);
  std::vector<int> half(1000, -1);
  for (std::size_t i = 0; i < 500; ++i) half[i] = static_cast<int>(i);
  CHECK(racing_score(half).reward == 400.0);

  // late visits count toward max coverage only
  std::vector<int> late(10, 5);
  late[9] = 2500;
  const auto o = racing_score(late);
  CHECK(o.coverage == 0.9);
  CHECK(o.max_coverage == 1.0);
  CHECK(o.T == 1000);
}

TEST_CASE("corrupt action") {
  Rng rng(3);
  const CarAction a{0.2, 0.5, 0.1};
  const auto same = corrupt_action(a, 0.0, rng);
  CHECK(same.steer == a.steer);
  CHECK(same.gas == a.gas);
  CHECK(same.brake == a.brake);
  for (int i = 0; i < 1000; ++i) {
    const auto n = corrupt_action({0, 1.0, 1.0}, 0.5, rng);
    CHECK(n.gas <= 1.0);
    CHECK(n.brake >= 0.0);
    CHECK(std::fabs(n.steer) <= 1.0);
  }
  CHECK_THROWS_AS(corrupt_action(2, 0.1, rng), ContractViolation);
}

TEST_CASE("demonstrations") {
  const auto demos = collect_demos(EnvId::lander, 5, DemoFilter::keep_successful, 11);
  REQUIRE(demos.size() == 5);
  for (const auto& e : demos) CHECK(e.outcome.success);
  CHECK(demos == collect_demos(EnvId::lander, 5, DemoFilter::keep_successful, 11));

  const auto race = collect_demos(EnvId::racing, 3, DemoFilter::keep_all, 4);
  REQUIRE(race.size() == 3);
  CHECK(race[0].track.seed != race[1].track.seed);
  CHECK(race[1].track.seed != race[2].track.seed);
  for (const auto& e : race) {
    CHECK(e.outcome.reward == 1000.0 * e.outcome.coverage - 0.1 * e.outcome.T);
    CHECK(e.outcome.coverage == 1.0);
  }
}

TEST_CASE("JSON lines round trip") {
  auto eps = collect_demos(EnvId::lander, 2, DemoFilter::keep_successful, 1);
  CHECK(episodes_from_jsonl(episodes_to_jsonl(eps)) == eps);
  const auto race = collect_demos(EnvId::racing, 1, DemoFilter::keep_all, 2);
  const auto back = episodes_from_jsonl(episodes_to_jsonl(race));
  REQUIRE(back.size() == 1);
  CHECK(back[0].track == race[0].track);
  CHECK(back[0].transitions.size() == race[0].transitions.size());
  CHECK(back[0].transitions[10].action == race[0].transitions[10].action);
  for (std::size_t i = 0; i < race[0].transitions[10].obs.values.size(); ++i) {
    CHECK(back[0].transitions[10].obs.values[i] == doctest::Approx(race[0].transitions[10].obs.values[i]).epsilon(1e-12));
  }
  CHECK_THROWS(episodes_from_jsonl("{\"not\": \"an episode\"}\n"));
}

}  // TEST_SUITE
