#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include "kim/training.hpp"

namespace kim {

void adam_step(AdamState& state, std::vector<double>& theta, std::span<const double> grad,
               const std::vector<bool>& mask, double lr, const AdamConfig& cfg) {
  const auto n = theta.size();
  if (grad.size() != n || (!mask.empty() && mask.size() != n)) {
    throw ContractViolation("adam_step: theta, grad and mask lengths differ");
  }
  if (state.m.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n) throw ContractViolation("adam_step: optimizer state has the wrong length");
  for (std::size_t i = 0; i < n; ++i) {
    if ((mask.empty() || mask[i]) && !std::isfinite(grad[i])) {
      throw NumericFault("theta[" + std::to_string(i) + "]", "non-finite gradient");
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mh = state.m[i] / c1;
    const double vh = state.v[i] / c2;
    theta[i] -= lr * mh / (std::sqrt(vh) + cfg.eps);
  }
}

namespace {

constexpr std::size_t kBlock = 64;

std::vector<double> resolve_weights(LossKind kind, const Program& p, std::span<const Sample> batch,
                                    std::span<const double> class_weights) {
  if (kind != LossKind::cross_entropy_balanced || !class_weights.empty()) {
    return {class_weights.begin(), class_weights.end()};
  }
  std::vector<SampleTarget> targets;
  targets.reserve(batch.size());
  for (const auto& s : batch) targets.push_back(s.target);
  const ValueShape& out = p.graph().outputs.front().shape;
  if (out.rank != 1 || out.dims[0].runtime) {
    throw ShapeError("cross entropy needs a fixed-length logit vector output");
  }
  return balanced_class_weights(targets, out.dims[0].size);
}

// Loss of samples [begin, end) accumulated in order; gradient added into `grad`.
double accumulate(Tape& tape, std::span<const Sample> batch, std::size_t begin, std::size_t end,
                  LossKind kind, std::span<const double> weights, double scale,
                  std::vector<double>* grad, std::vector<double>& dpred) {
  double loss = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    const Sample& s = batch[i];
    tape.forward(s.inputs);
    const Value& out = tape.output(0);
    dpred.resize(out.size());
    loss += sample_loss(kind, out.data, s.target, weights, dpred);
    if (grad) {
      for (auto& d : dpred) d *= scale;
      const std::span<const double> seed(dpred);
      tape.backward(std::span<const std::span<const double>>(&seed, 1), *grad);
    }
  }
  return loss;
}

void check_batch(const Program& p, const ParameterVector& theta, std::span<const Sample> batch) {
  if (batch.empty()) throw ContractViolation("empty batch");
  if (theta.values.size() != p.parameter_count()) {
    throw ContractViolation("parameter vector has " + std::to_string(theta.values.size()) +
                            " values, graph needs " + std::to_string(p.parameter_count()));
  }
}

}  // namespace

BatchResult batch_loss(const Program& p, const ParameterVector& theta, std::span<const Sample> batch,
                       LossKind kind, std::span<const double> class_weights, bool want_grad) {
  check_batch(p, theta, batch);
  const auto weights = resolve_weights(kind, p, batch, class_weights);
  const std::size_t n = batch.size();
  const std::size_t n_blocks = (n + kBlock - 1) / kBlock;
  const std::size_t n_params = p.parameter_count();
  const double scale = 1.0 / static_cast<double>(n);
  std::vector<double> block_loss(n_blocks, 0.0);
  std::vector<std::vector<double>> block_grad(want_grad ? n_blocks : 0);
  std::vector<std::exception_ptr> errors(n_blocks);

#pragma omp parallel
  {
    Tape tape(p);
    tape.bind_parameters(theta);
    std::vector<double> dpred;
#pragma omp for schedule(static)
    for (std::size_t b = 0; b < n_blocks; ++b) {
      try {
        std::vector<double>* g = nullptr;
        if (want_grad) {
          block_grad[b].assign(n_params, 0.0);
          g = &block_grad[b];
        }
        block_loss[b] = accumulate(tape, batch, b * kBlock, std::min(n, (b + 1) * kBlock), kind,
                                   weights, scale, g, dpred);
      } catch (...) {
        errors[b] = std::current_exception();
      }
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  BatchResult r;
  double total = 0.0;
  for (double l : block_loss) total += l;
  r.loss = total * scale;
  if (want_grad) {
    r.grad.assign(n_params, 0.0);
    for (const auto& g : block_grad) {
      for (std::size_t k = 0; k < n_params; ++k) r.grad[k] += g[k];
    }
  }
  return r;
}

BatchResult batch_loss_serial(const Program& p, const ParameterVector& theta,
                              std::span<const Sample> batch, LossKind kind,
                              std::span<const double> class_weights, bool want_grad) {
  check_batch(p, theta, batch);
  const auto weights = resolve_weights(kind, p, batch, class_weights);
  const double scale = 1.0 / static_cast<double>(batch.size());
  Tape tape(p);
  tape.bind_parameters(theta);
  std::vector<double> dpred;
  BatchResult r;
  if (want_grad) r.grad.assign(p.parameter_count(), 0.0);
  r.loss = accumulate(tape, batch, 0, batch.size(), kind, weights, scale,
                      want_grad ? &r.grad : nullptr, dpred) *
           scale;
  return r;
}

// ---------------------------------------------------------------------------

TrainedModel train_gradient(const PolicyGraph& g, const ParameterVector& theta0,
                            std::span<const Sample> train, std::span<const Sample> validation,
                            const TrainConfig& cfg, std::span<const double> class_weights) {
  if (cfg.steps <= 0) throw ContractViolation("training needs steps > 0");
  if (train.empty()) throw ContractViolation("empty training set");
  const Program p(g);
  std::vector<bool> mask(p.parameter_count(), false);
  for (auto i : p.trainable_positions()) mask[i] = true;

  // Validation uses the training split's class weights.
  const auto weights = resolve_weights(cfg.loss, p, train, class_weights);

  TrainedModel m;
  m.graph = g;
  m.theta = theta0;
  ParameterVector theta = theta0;
  AdamState state;
  m.train_curve.reserve(static_cast<std::size_t>(cfg.steps));
  double best = std::numeric_limits<double>::infinity();
  for (int t = 0; t < cfg.steps; ++t) {
    BatchResult r;
    double selected = 0.0;
    try {
      r = batch_loss(p, theta, train, cfg.loss, weights, true);
      m.train_curve.push_back(r.loss);
      selected = r.loss;
      if (!validation.empty()) {
        const double vl = batch_loss(p, theta, validation, cfg.loss, weights, false).loss;
        m.validation_curve.push_back(vl);
        selected = vl;
      }
      if (selected < best) {
        best = selected;
        m.best_step = t;
        m.theta = theta;
      }
      adam_step(state, theta.values, r.grad, mask, cfg.learning_rate, cfg.adam);
    } catch (const NumericFault& e) {
      throw NumericFault(e.node(), "at training step " + std::to_string(t) + ": " + e.what());
    }
  }
  m.best_loss = best;
  return m;
}

std::vector<std::map<std::string, std::vector<double>>> grid_combos(const PolicyGraph& g) {
  std::vector<const Parameter*> searched;
  for (const auto& p : g.parameters) {
    if (p.kind != ParamKind::non_gradient || p.frozen) continue;
    if (p.grid.empty()) {
      throw ConfigError("non-gradient parameter '" + p.name + "' declares no grid");
    }
    searched.push_back(&p);
  }
  std::vector<std::map<std::string, std::vector<double>>> out(1);
  // The last parameter varies fastest.
  for (const Parameter* p : searched) {
    std::vector<std::map<std::string, std::vector<double>>> next;
    next.reserve(out.size() * p->grid.size());
    for (const auto& c : out) {
      for (const auto& v : p->grid) {
        auto e = c;
        e[p->name] = v;
        next.push_back(std::move(e));
      }
    }
    out = std::move(next);
  }
  return out;
}

ParameterVector apply_combo(const PolicyGraph& g, ParameterVector theta,
                            const std::map<std::string, std::vector<double>>& combo) {
  const auto offsets = parameter_offsets(g);
  for (const auto& [name, v] : combo) {
    std::size_t i = 0;
    while (i < g.parameters.size() && g.parameters[i].name != name) ++i;
    if (i == g.parameters.size()) throw ConfigError("combo names unknown parameter '" + name + "'");
    if (v.size() != g.parameters[i].length) {
      throw ConfigError("combo value for '" + name + "' has the wrong length");
    }
    std::copy(v.begin(), v.end(), theta.values.begin() + static_cast<std::ptrdiff_t>(offsets[i]));
  }
  return theta;
}

TrainedModel grid_search_train(const PolicyGraph& g, std::span<const Sample> train,
                               std::span<const Sample> validation, const TrainConfig& cfg,
                               std::span<const double> class_weights) {
  const auto combos = grid_combos(g);
  const auto theta0 = init_parameters(g);
  const auto n = static_cast<long>(combos.size());
  std::vector<TrainedModel> runs(combos.size());
  std::vector<std::exception_ptr> errors(combos.size());
#pragma omp parallel for schedule(dynamic, 1) if (cfg.parallel_grid)
  for (long i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      runs[k] = train_gradient(g, apply_combo(g, theta0, combos[k]), train, validation, cfg,
                               class_weights);
      runs[k].combo = combos[k];
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::size_t winner = 0;
  for (std::size_t k = 1; k < runs.size(); ++k) {
    if (runs[k].best_loss < runs[winner].best_loss) winner = k;
  }
  std::vector<ComboResult> summary;
  for (const auto& r : runs) summary.push_back({r.combo, r.best_loss, r.best_step});
  TrainedModel best = std::move(runs[winner]);
  best.combos = std::move(summary);
  return best;
}

}  // namespace kim
