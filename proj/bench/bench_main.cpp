#include <benchmark/benchmark.h>

#include "kim/dsl.hpp"
#include "kim/evaluation.hpp"

using namespace kim;

namespace {

struct RacingData {
  PolicyGraph graph;
  ParameterVector theta;
  std::vector<Sample> samples;
};

const RacingData& racing_data() {
  static const RacingData d = [] {
    RacingData r;
    const auto demos = collect_demos(EnvId::racing, 2, DemoFilter::keep_all, 1);
    r.graph = resolve_model({ModelSource::Kind::mlp, "", {10}}, EnvId::racing, 0);
    r.theta = init_parameters(r.graph);
    std::vector<TransitionRef> refs;
    for (std::size_t e = 0; e < demos.size(); ++e) {
      for (std::size_t s = 0; s < demos[e].transitions.size(); ++s) refs.push_back({e, s});
    }
    r.samples = make_samples(r.graph, EnvId::racing, demos, refs, fit_normalizer(EnvId::racing));
    return r;
  }();
  return d;
}

void BM_BatchLoss(benchmark::State& state) {
  const auto& d = racing_data();
  const Program p(d.graph);
  for (auto _ : state) {
    benchmark::DoNotOptimize(batch_loss(p, d.theta, d.samples, LossKind::mse, {}, true).loss);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.samples.size()));
}

void BM_BatchLossSerial(benchmark::State& state) {
  const auto& d = racing_data();
  const Program p(d.graph);
  for (auto _ : state) {
    benchmark::DoNotOptimize(batch_loss_serial(p, d.theta, d.samples, LossKind::mse, {}, true).loss);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.samples.size()));
}

void BM_Evaluate(benchmark::State& state) {
  const auto spec = expert_policy(EnvId::lander);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_policy(spec, 32, 0.0).success_rate);
}

void BM_EvaluateSerial(benchmark::State& state) {
  const auto spec = expert_policy(EnvId::lander);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_policy_serial(spec, 32, 0.0).success_rate);
}

// Tape forward against the tree-walking interpreter on the racing fixture.
void BM_RacingForwardTape(benchmark::State& state) {
  const auto g = dsl::load_fixture("racing_kim");
  const auto track = racing_make_track(2);
  const auto in = graph_inputs(g, EnvId::racing, racing_observe(track, racing_reset(track)));
  const Program p(g);
  Tape tape(p);
  tape.bind_parameters(init_parameters(g));
  for (auto _ : state) {
    tape.forward(in);
    benchmark::DoNotOptimize(tape.output(0).data[0]);
  }
}

void BM_RacingForwardInterpreter(benchmark::State& state) {
  const auto g = dsl::load_fixture("racing_kim");
  const auto track = racing_make_track(2);
  const auto in = graph_inputs(g, EnvId::racing, racing_observe(track, racing_reset(track)));
  const ValueMap m{{"tiles", in[0]}, {"indicators", in[1]}};
  const auto theta = init_parameters(g);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(g, theta, m).at("action").data[0]);
}

}  // namespace

BENCHMARK(BM_BatchLoss)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchLossSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Evaluate)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RacingForwardTape)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_RacingForwardInterpreter)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
