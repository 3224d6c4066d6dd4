#include <doctest.h>

#include <cmath>
#include <set>

#include "kim/dsl.hpp"
#include "kim/error.hpp"
#include "kim/training.hpp"

using namespace kim;

namespace {

Episode dummy_episode(std::size_t steps, std::uint64_t seed) {
  Episode e;
  e.seed = seed;
  for (std::size_t i = 0; i < steps; ++i) {
    Transition t;
    t.obs.values.assign(8, static_cast<double>(i));
    t.action = {static_cast<double>(i % 4)};
    e.transitions.push_back(t);
  }
  return e;
}

std::vector<Sample> linear_data(std::initializer_list<std::pair<double, double>> xy) {
  std::vector<Sample> s;
  for (auto [x, y] : xy) s.push_back({{Value::scalar(x)}, {-1, {y}}});
  return s;
}

const char* kLinear = "model lin\ninput x: float\nparam w: gradient = 0\noutput y = w * x\n";

}  // namespace

TEST_SUITE("training") {

TEST_CASE("split sizes and determinism") {
  const std::vector<Episode> one{dummy_episode(100, 0)};
  const auto s = split_dataset(one, SplitMode::by_step, 0.2, 9);
  CHECK(s.train.size() == 80);
  CHECK(s.validation.size() == 20);
  const auto again = split_dataset(one, SplitMode::by_step, 0.2, 9);
  CHECK(s.train == again.train);
  CHECK(s.validation == again.validation);

  std::vector<Episode> ten;
  for (std::uint64_t i = 0; i < 10; ++i) ten.push_back(dummy_episode(7, i));
  const auto e = split_dataset(ten, SplitMode::by_episode, 0.2, 1);
  std::set<std::size_t> val_eps, train_eps;
  for (const auto& r : e.validation) val_eps.insert(r.episode);
  for (const auto& r : e.train) train_eps.insert(r.episode);
  CHECK(val_eps.size() == 2);
  CHECK(train_eps.size() == 8);
  for (auto v : val_eps) CHECK(train_eps.count(v) == 0);

  CHECK_THROWS_AS(split_dataset(one, SplitMode::by_step, 0.0, 1), ContractViolation);
}

TEST_CASE("normalizers") {
  const auto lander = fit_normalizer(EnvId::lander);
  Observation o;
  o.values = {5, -3, 0.5, 0, 0, 0, 1, 0};
  CHECK(apply_normalizer(lander, o) == o);

  const auto race = fit_normalizer(EnvId::racing);
  Observation r;
  r.tile_rows = 2;
  r.values.assign(2 * 8 + 7, 0.0);
  r.values[0] = race.tile_scale[0] > 0 ? 1.0 / race.tile_scale[0] : 0;  // upper bound of column 0
  r.values[8 + 0] = 0.0;
  r.values[8 + 1] = 1000.0;  // clamped
  const auto n = apply_normalizer(race, r);
  CHECK(n.values[0] == doctest::Approx(1.0));
  CHECK(n.values[8] == 0.0);
  CHECK(n.values[9] == 1.0);
  for (double v : n.values) CHECK(std::fabs(v) <= 1.0);
}

TEST_CASE("adam") {
  AdamState st;
  std::vector<double> theta{0.0};
  const std::vector<double> g{1.0};
  adam_step(st, theta, g, {}, 0.03);
  CHECK(theta[0] == doctest::Approx(-0.03).epsilon(1e-6));

  const double m = st.m[0], v = st.v[0];
  const std::vector<double> zero{0.0};
  const double before = theta[0];
  AdamState frozen_state = st;
  std::vector<double> t2 = theta;
  adam_step(frozen_state, t2, zero, {false}, 0.03);
  CHECK(t2[0] == before);
  adam_step(st, theta, zero, {}, 0.03);
  CHECK(st.m[0] == doctest::Approx(0.9 * m));
  CHECK(st.v[0] == doctest::Approx(0.999 * v));

  std::vector<double> bad{0.0};
  AdamState s3;
  const std::vector<double> nan{std::nan("")};
  CHECK_THROWS_AS(adam_step(s3, bad, nan, {}, 0.03), NumericFault);
}

TEST_CASE("linear model converges to the least-squares optimum") {
  const auto g = dsl::parse(kLinear);
  const auto data = linear_data({{1, 2}});
  TrainConfig cfg;
  cfg.steps = 500;
  cfg.learning_rate = 0.03;
  const auto m = train_gradient(g, init_parameters(g), data, data, cfg);
  CHECK(std::fabs(m.theta.values[0] - 2.0) < 1e-3);
  CHECK(m.train_curve.size() == 500);
  CHECK(m.validation_curve.size() == 500);

  // y = 3x + noise-free pair plus a second point: optimum w* = sum(xy) / sum(x^2)
  const auto two = linear_data({{1, 3}, {2, 5}});
  cfg.steps = 2000;
  const auto m2 = train_gradient(g, init_parameters(g), two, {}, cfg);
  CHECK(std::fabs(m2.theta.values[0] - 13.0 / 5.0) < 1e-3);

  cfg.steps = 0;
  CHECK_THROWS_AS(train_gradient(g, init_parameters(g), data, data, cfg), ContractViolation);
}

TEST_CASE("training is deterministic") {
  const auto g = dsl::parse(kLinear);
  const auto data = linear_data({{1, 2}, {0.5, 0.7}, {-1, -2.5}});
  TrainConfig cfg;
  cfg.steps = 50;
  const auto a = train_gradient(g, init_parameters(g), data, {}, cfg);
  const auto b = train_gradient(g, init_parameters(g), data, {}, cfg);
  CHECK(a.theta == b.theta);
  CHECK(a.train_curve == b.train_curve);
}

TEST_CASE("grid search is exhaustive") {
  const auto g = dsl::parse(
      "model gs\ninput x: float\nparam a: nongradient = 1 grid(1, 2)\nparam w: gradient = 0\n"
      "output y = clip(w * x, a, a)\n");
  CHECK(grid_combos(g).size() == 2);
  const auto data = linear_data({{1, 2}});
  TrainConfig cfg;
  cfg.steps = 5;
  const auto m = grid_search_train(g, data, data, cfg);
  REQUIRE(m.combos.size() == 2);
  for (const auto& c : m.combos) CHECK(m.best_loss <= c.best_loss);
  CHECK(m.combo.at("a") == std::vector<double>{2});
  CHECK(m.best_loss == 0.0);

  // singleton grids reduce to plain training
  const auto single = dsl::parse(
      "model s\ninput x: float\nparam a: nongradient = 1 grid(1)\nparam w: gradient = 0\noutput y = a * w * x\n");
  const auto gs = grid_search_train(single, data, data, cfg);
  const auto plain = train_gradient(single, init_parameters(single), data, data, cfg);
  CHECK(gs.theta == plain.theta);
  CHECK(gs.best_loss == plain.best_loss);

  const auto missing = dsl::parse(
      "model m\ninput x: float\nparam a: nongradient = 1\nparam w: gradient = 0\noutput y = a * w * x\n");
  CHECK_THROWS_AS(grid_search_train(missing, data, data, cfg), ConfigError);
}

TEST_CASE("frozen parameters do not move") {
  const auto g = dsl::parse(
      "model f\ninput x: float\nparam w: gradient = 0\nparam f: gradient = 0.7 frozen\noutput y = w * x + f * x\n");
  const auto data = linear_data({{1, 2}, {2, 3}});
  TrainConfig cfg;
  cfg.steps = 100;
  const auto m = train_gradient(g, init_parameters(g), data, {}, cfg);
  CHECK(m.theta.values[1] == 0.7);
  CHECK(m.theta.values[0] != 0.0);
}

TEST_CASE("checkpoint law") {
  const auto g = dsl::parse(kLinear);
  const auto train = linear_data({{1, 2}, {2, 4.5}});
  const auto val = linear_data({{1.5, 2.8}});
  TrainConfig cfg;
  cfg.steps = 200;
  cfg.learning_rate = 0.1;
  const auto m = train_gradient(g, init_parameters(g), train, val, cfg);
  const Program p(g);
  const auto re = batch_loss(p, m.theta, val, LossKind::mse, {}, false);
  CHECK(re.loss == m.best_loss);
  double lowest = m.validation_curve[0];
  for (double v : m.validation_curve) lowest = std::min(lowest, v);
  CHECK(m.best_loss == lowest);
}

TEST_CASE("mlp censuses") {
  CHECK(parameter_census(build_mlp(8, {1}, 4)).gradient == 17);
  CHECK(parameter_census(build_mlp(8, {28}, 4)).gradient == 368);
  CHECK(parameter_census(build_mlp(7 + 8 * kMlpRacingTiles, {10}, 3)).gradient == 2513);
  CHECK(build_mlp(8, {4}, 4, 1) == build_mlp(8, {4}, 4, 1));
  CHECK_THROWS_AS(build_mlp(8, {0}, 4), ContractViolation);

  const auto g = build_mlp(8, {3}, 2, 5);
  const auto theta = init_parameters(g);
  for (std::size_t i = 0; i < 8 * 3; ++i) CHECK(std::fabs(theta.values[i]) <= 1.0 / std::sqrt(8.0));
}

TEST_CASE("parallel batch loss matches the serial reference") {
  const auto g = build_mlp(8, {6}, 4, 2);
  const auto theta = init_parameters(g);
  Rng rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Sample> batch;
  for (int i = 0; i < 300; ++i) {
    std::vector<double> x(8);
    for (auto& v : x) v = u(rng);
    batch.push_back({{Value::vector(x)}, {i % 4, {}}});
  }
  const Program p(g);
  const std::vector<double> w{1.0, 0.5, 2.0, 1.5};
  const auto par = batch_loss(p, theta, batch, LossKind::cross_entropy_balanced, w, true);
  const auto ser = batch_loss_serial(p, theta, batch, LossKind::cross_entropy_balanced, w, true);
  CHECK(par.loss == doctest::Approx(ser.loss).epsilon(1e-12));
  REQUIRE(par.grad.size() == ser.grad.size());
  for (std::size_t i = 0; i < par.grad.size(); ++i) CHECK(par.grad[i] == doctest::Approx(ser.grad[i]).epsilon(1e-10));
  const auto again = batch_loss(p, theta, batch, LossKind::cross_entropy_balanced, w, true);
  CHECK(again.loss == par.loss);
  CHECK(again.grad == par.grad);
  CHECK_THROWS_AS(batch_loss(p, theta, std::span<const Sample>{}, LossKind::mse, {}, false), ContractViolation);
}

TEST_CASE("pipeline report and checkpoint") {
  const auto demos = collect_demos(EnvId::lander, 2, DemoFilter::keep_successful, 3);
  TrainConfig cfg;
  cfg.steps = 20;
  cfg.loss = LossKind::cross_entropy_balanced;
  const ModelSource src{ModelSource::Kind::fixture, "lander_kim", {}};
  const auto a = train_pipeline(src, EnvId::lander, demos, cfg);
  const auto b = train_pipeline(src, EnvId::lander, demos, cfg);
  CHECK(training_report_json(a) == training_report_json(b));
  CHECK(a.n_train + a.n_validation == demos[0].transitions.size() + demos[1].transitions.size());

  const auto text = checkpoint_text(a.model.graph, a.model.theta, EnvId::lander);
  const auto c = parse_checkpoint(text);
  CHECK(c.graph == a.model.graph);
  CHECK(c.theta == a.model.theta);
  CHECK(c.env == EnvId::lander);
  CHECK(checkpoint_text(c.graph, c.theta, c.env) == text);

  CHECK_THROWS_AS(train_pipeline({ModelSource::Kind::fixture, "nope", {}}, EnvId::lander, demos, cfg), ConfigError);
  CHECK_THROWS_AS(read_checkpoint("/nonexistent/x.kimc"), IoError);
}

}  // TEST_SUITE
