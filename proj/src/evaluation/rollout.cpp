#include <algorithm>
#include <cmath>
#include <exception>

#include "kim/evaluation.hpp"

namespace kim {

namespace {

class LanderExpert final : public Policy {
 public:
  std::vector<double> act(const Observation& obs) override {
    std::vector<double> logits(4, 0.0);
    logits[static_cast<std::size_t>(lander_expert(obs.values))] = 1.0;
    return logits;
  }
};

class RacingExpert final : public Policy {
 public:
  explicit RacingExpert(const EnvConfig& cfg) : cfg_(cfg) {}
  std::vector<double> act(const Observation& obs) override {
    const CarAction a = racing_expert(obs, cfg_.racing_expert, cfg_.racing);
    return {a.steer, a.gas, a.brake};
  }

 private:
  EnvConfig cfg_;
};

class GraphPolicy final : public Policy {
 public:
  GraphPolicy(std::shared_ptr<const Program> p, const ParameterVector& theta, const Normalizer& norm,
              EnvId env)
      : program_(std::move(p)), tape_(*program_), norm_(norm), env_(env) {
    tape_.bind_parameters(theta);
  }
  std::vector<double> act(const Observation& obs) override {
    inputs_ = graph_inputs(program_->graph(), env_, apply_normalizer(norm_, obs));
    tape_.forward(inputs_);
    return tape_.output(0).data;
  }

 private:
  std::shared_ptr<const Program> program_;
  Tape tape_;
  Normalizer norm_;
  EnvId env_;
  std::vector<Value> inputs_;
};

std::size_t action_arity(EnvId env) { return env == EnvId::lander ? 4 : 3; }

}  // namespace

PolicySpec expert_policy(EnvId env, const EnvConfig& cfg) {
  PolicySpec s;
  s.id = std::string(to_string(env)) + "_expert";
  s.checkpoint_hash = "expert";
  s.env = env;
  if (env == EnvId::lander) {
    s.make = [] { return std::make_unique<LanderExpert>(); };
  } else {
    s.make = [cfg] { return std::make_unique<RacingExpert>(cfg); };
  }
  return s;
}

PolicySpec graph_policy(std::string id, const PolicyGraph& g, const ParameterVector& theta,
                        const Normalizer& norm, EnvId env) {
  PolicyGraph shaped = g;
  infer_shapes(shaped);
  auto program = std::make_shared<const Program>(shaped);
  const auto& out = program->graph().outputs;
  if (out.empty() || out[0].shape.rank != 1 || out[0].shape.dims[0].runtime ||
      out[0].shape.dims[0].size != action_arity(env)) {
    throw ShapeError("graph '" + g.name + "' output does not match the " +
                     std::string(to_string(env)) + " action space (" +
                     std::to_string(action_arity(env)) + " values)");
  }
  if (theta.values.size() != program->parameter_count()) {
    throw ContractViolation("parameter vector does not match graph '" + g.name + "'");
  }
  PolicySpec s;
  s.id = std::move(id);
  s.checkpoint_hash = sha256_hex(checkpoint_text(g, theta, env));
  s.env = env;
  s.make = [program, theta, norm, env] {
    return std::make_unique<GraphPolicy>(program, theta, norm, env);
  };
  return s;
}

PolicySpec checkpoint_policy(std::string id, const Checkpoint& c) {
  return graph_policy(std::move(id), c.graph, c.theta, fit_normalizer(c.env), c.env);
}

Rollout rollout(const PolicySpec& spec, std::uint64_t seed, double noise_level,
                const EnvConfig& cfg, const RolloutOptions& opt) {
  if (!(noise_level >= 0.0)) throw ContractViolation("noise level must be non-negative");
  if (spec.env == EnvId::lander && noise_level > 0.0) {
    throw ContractViolation("action noise applies to continuous actions only");
  }
  auto policy = spec.make();
  Rollout r;
  r.seed = seed;
  r.episode.env = spec.env;
  r.episode.seed = seed;
  const auto arity = action_arity(spec.env);

  // Returns false when the policy fails; the rollout then stops where it is.
  auto query = [&](const Observation& obs, std::vector<double>& out) {
    try {
      out = policy->act(obs);
    } catch (const NumericFault& e) {
      r.aborted = true;
      r.fault = e.what();
      return false;
    }
    if (out.size() != arity) {
      throw ShapeError("policy '" + spec.id + "' returned " + std::to_string(out.size()) +
                       " values, expected " + std::to_string(arity));
    }
    for (double v : out) {
      if (!std::isfinite(v)) {
        r.aborted = true;
        r.fault = "non-finite policy output";
        return false;
      }
    }
    return true;
  };

  std::vector<double> out;
  if (spec.env == EnvId::lander) {
    LanderState s = lander_reset(seed, cfg.lander);
    while (s.terminal == Terminal::none) {
      Observation obs = lander_observe(s);
      if (!query(obs, out)) break;
      const int a = static_cast<int>(argmax(out));
      if (opt.record_transitions) {
        r.episode.transitions.push_back({std::move(obs), {static_cast<double>(a)}, {}});
      }
      s = lander_step(s, a, cfg.lander);
    }
    r.outcome.terminal = s.terminal;
    r.outcome.success = s.terminal == Terminal::landed;
    r.outcome.steps = s.step_count;
    r.episode.outcome = r.outcome;
    return r;
  }

  const Track track = racing_make_track(seed, cfg.racing);
  CarState s = racing_reset(track);
  Rng noise(derive_seed(seed, "eval-noise"));
  if (opt.record_path) r.path.push_back({s.px, s.py});
  // Once every tile is visited the score can no longer change.
  while (s.n_visited < track.tiles.size() && s.step_count < cfg.racing.max_steps) {
    Observation obs = racing_observe(track, s, cfg.racing);
    if (!query(obs, out)) break;
    const CarAction a = corrupt_action({out[0], out[1], out[2]}, noise_level, noise);
    if (opt.record_transitions) {
      r.episode.transitions.push_back({std::move(obs), {a.steer, a.gas, a.brake}, {s.px, s.py, s.psi}});
    }
    s = racing_step(track, s, a, cfg.racing);
    if (opt.record_path) r.path.push_back({s.px, s.py});
  }
  r.outcome = racing_score(s.first_visit, cfg.racing);
  r.outcome.steps = s.step_count;
  if (opt.record_transitions) r.episode.track = track;
  r.episode.outcome = r.outcome;
  return r;
}

// ---------------------------------------------------------------------------

std::vector<double> per_seed_metric(const EvalReport& r) {
  std::vector<double> m;
  m.reserve(r.rollouts.size());
  for (const auto& x : r.rollouts) {
    m.push_back(r.env == EnvId::lander ? (x.outcome.success ? 1.0 : 0.0) : x.outcome.reward);
  }
  return m;
}

void aggregate(EvalReport& r) {
  const auto n = r.rollouts.size();
  if (n == 0) throw ContractViolation("report without rollouts");
  double succ = 0, reward = 0, cov = 0, maxcov = 0;
  std::size_t aborted = 0;
  for (const auto& x : r.rollouts) {
    succ += x.outcome.success ? 1.0 : 0.0;
    reward += x.outcome.reward;
    cov += x.outcome.coverage;
    maxcov += x.outcome.max_coverage;
    aborted += x.aborted ? 1 : 0;
  }
  const double dn = static_cast<double>(n);
  r.success_rate = succ / dn;
  r.mean_reward = reward / dn;
  r.mean_coverage = cov / dn;
  r.mean_max_coverage = maxcov / dn;
  r.aborted = aborted;
  std::vector<double> rewards;
  for (const auto& x : r.rollouts) rewards.push_back(x.outcome.reward);
  r.std_reward = sample_std(rewards);
  const auto metric = per_seed_metric(r);
  if (n >= 2) {
    r.ci = confidence_interval(metric);
  } else {
    r.ci.reset();
  }
}

EvalReport evaluate_policy(const PolicySpec& policy, std::size_t n_seeds, double noise_level,
                           const EnvConfig& cfg, const RolloutOptions& opt) {
  if (n_seeds == 0) throw ContractViolation("evaluation needs at least one seed");
  EvalReport r;
  r.policy_id = policy.id;
  r.checkpoint_hash = policy.checkpoint_hash;
  r.env = policy.env;
  r.noise_level = noise_level;
  r.rollouts.resize(n_seeds);
  std::vector<std::exception_ptr> errors(n_seeds);
  const auto n = static_cast<long>(n_seeds);
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      r.rollouts[k] = rollout(policy, k, noise_level, cfg, opt);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  aggregate(r);
  return r;
}

EvalReport evaluate_policy_serial(const PolicySpec& policy, std::size_t n_seeds, double noise_level,
                                  const EnvConfig& cfg) {
  if (n_seeds == 0) throw ContractViolation("evaluation needs at least one seed");
  EvalReport r;
  r.policy_id = policy.id;
  r.checkpoint_hash = policy.checkpoint_hash;
  r.env = policy.env;
  r.noise_level = noise_level;
  for (std::size_t k = 0; k < n_seeds; ++k) r.rollouts.push_back(rollout(policy, k, noise_level, cfg));
  aggregate(r);
  return r;
}

// ---------------------------------------------------------------------------

std::vector<DemoSet> sample_demo_sets(std::size_t pool_size, std::size_t k_sets,
                                      std::size_t n_per_set, std::uint64_t seed) {
  if (n_per_set == 0 || n_per_set > pool_size) {
    throw ContractViolation("cannot draw " + std::to_string(n_per_set) + " demos from a pool of " +
                            std::to_string(pool_size));
  }
  std::vector<DemoSet> sets;
  for (std::size_t k = 0; k < k_sets; ++k) {
    DemoSet s;
    s.key = derive_seed(seed, "demo-set", k);
    Rng rng(s.key);
    std::vector<std::size_t> order(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    s.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_per_set));
    std::sort(s.indices.begin(), s.indices.end());
    sets.push_back(std::move(s));
  }
  return sets;
}

ResampleResult resample_one(const Trainer& train, std::span<const Episode> pool, const DemoSet& set,
                            std::size_t n_eval_seeds, const EnvConfig& cfg) {
  std::vector<Episode> demos;
  for (auto i : set.indices) demos.push_back(pool[i]);
  const PolicySpec policy = train(demos, set);
  return {set, evaluate_policy(policy, n_eval_seeds, 0.0, cfg)};
}

std::vector<ResampleResult> resample_experiment(const Trainer& train, std::span<const Episode> pool,
                                                std::span<const DemoSet> sets,
                                                std::size_t n_eval_seeds, const EnvConfig& cfg) {
  std::vector<ResampleResult> out;
  for (const auto& s : sets) out.push_back(resample_one(train, pool, s, n_eval_seeds, cfg));
  return out;
}

std::vector<EvalReport> noise_sweep(std::span<const PolicySpec> policies,
                                    std::span<const double> levels, std::size_t n_seeds,
                                    const EnvConfig& cfg) {
  if (std::find(levels.begin(), levels.end(), 0.0) == levels.end()) {
    throw ContractViolation("noise sweep needs level 0 for the retention baseline");
  }
  std::vector<EvalReport> out;
  for (const auto& p : policies) {
    if (p.env != EnvId::racing) throw ContractViolation("noise sweeps need a continuous-action env");
    const std::size_t first = out.size();
    double base = 0.0;
    for (double level : levels) {
      out.push_back(evaluate_policy(p, n_seeds, level, cfg));
      if (level == 0.0) base = out.back().mean_reward;
    }
    for (std::size_t i = first; i < out.size(); ++i) {
      out[i].retention = base != 0.0 ? out[i].mean_reward / base : 0.0;
    }
  }
  return out;
}

}  // namespace kim
