#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <unordered_map>

#include "kim/autodiff.hpp"

namespace kim {

namespace {

bool flows_through(OpKind op, std::size_t arg) {
  switch (op) {
    case OpKind::nor:
    case OpKind::logical_not:
    case OpKind::any:
    case OpKind::lt:
    case OpKind::gt:
    case OpKind::argmin_index:
      return false;
    case OpKind::col:
    case OpKind::window:
      return arg == 0;
    case OpKind::where:
      return arg != 0;
    default:
      return true;
  }
}

}  // namespace

Program::Program(const PolicyGraph& g) : graph_(g) {
  require_valid(graph_);
  infer_shapes(graph_);
  offsets_ = parameter_offsets(graph_);
  for (std::size_t i = 0; i < graph_.parameters.size(); ++i) {
    if (!graph_.parameters[i].trainable()) continue;
    for (std::size_t k = 0; k < graph_.parameters[i].length; ++k) {
      trainable_.push_back(offsets_[i] + k);
    }
  }

  std::unordered_map<std::string, std::size_t> slot_of;
  std::size_t next = 0;
  for (const auto& in : graph_.inputs) {
    slot_of[in.name] = next++;
    slot_needs_grad_.push_back(false);
  }
  param_base_ = next;
  for (const auto& p : graph_.parameters) {
    slot_of[p.name] = next++;
    slot_needs_grad_.push_back(p.trainable());
  }
  const_base_ = next;

  std::vector<std::size_t> const_slots;
  auto new_slot = [&](bool needs_grad) {
    slot_needs_grad_.push_back(needs_grad);
    return next++;
  };

  const std::size_t nl = graph_.latents.size();
  std::size_t current_node = 0;
  std::function<std::size_t(const Expr&)> compile = [&](const Expr& e) -> std::size_t {
    switch (e.kind) {
      case ExprKind::ref:
        return slot_of.at(e.name);
      case ExprKind::literal: {
        const auto s = new_slot(false);
        constants_.push_back(Value::scalar(e.literal));
        const_slots.push_back(s);
        return s;
      }
      case ExprKind::list:
        throw StructuralError("list outside lin_combine");
      case ExprKind::call:
        break;
    }
    Instr ins;
    ins.op = e.op;
    ins.node = current_node;
    if (e.op == OpKind::lin_combine) {
      for (const auto& t : e.args[0].args) ins.args.push_back(compile(t));
      ins.n_terms = ins.args.size();
      if (e.args[1].kind == ExprKind::list) {
        for (const auto& w : e.args[1].args) ins.args.push_back(compile(w));
      } else {
        ins.args.push_back(compile(e.args[1]));
        ins.vector_weights = true;
      }
      if (e.args.size() == 3) {
        ins.args.push_back(compile(e.args[2]));
        ins.has_bias = true;
      }
    } else if (e.op == OpKind::col) {
      ins.args.push_back(compile(e.args[0]));
      ins.index = static_cast<std::size_t>(e.args[1].literal);
    } else {
      for (const auto& a : e.args) ins.args.push_back(compile(a));
    }
    for (std::size_t i = 0; i < ins.args.size(); ++i) {
      const bool dep = slot_needs_grad_[ins.args[i]];
      ins.arg_dependent = ins.arg_dependent || dep;
      ins.needs_grad = ins.needs_grad || (dep && flows_through(ins.op, i));
    }
    ins.out = new_slot(ins.needs_grad);
    instrs_.push_back(std::move(ins));
    return instrs_.back().out;
  };

  std::unordered_map<std::string, std::size_t> node_index;
  for (std::size_t i = 0; i < nl; ++i) node_index[graph_.latents[i].name] = i;
  for (std::size_t i = 0; i < graph_.outputs.size(); ++i) {
    node_index[graph_.outputs[i].name] = nl + i;
  }
  for (const auto& l : graph_.latents) node_names_.push_back(l.name);
  for (const auto& o : graph_.outputs) node_names_.push_back(o.name);

  output_slots_.resize(graph_.outputs.size());
  for (const auto& name : topological_order(graph_)) {
    current_node = node_index.at(name);
    const NodeSpec& n = current_node < nl ? graph_.latents[current_node]
                                          : graph_.outputs[current_node - nl];
    const auto s = compile(n.expr);
    if (current_node < nl) {
      slot_of[name] = s;
    } else {
      output_slots_[current_node - nl] = s;
    }
  }
  n_slots_ = next;

  // Constants are stored densely; remember their slots via a parallel table.
  std::vector<Value> dense(n_slots_);
  for (std::size_t i = 0; i < const_slots.size(); ++i) dense[const_slots[i]] = constants_[i];
  constants_ = std::move(dense);
}

Tape::Tape(const Program& p, bool track_kinks)
    : program_(p),
      track_kinks_(track_kinks),
      values_(p.constants_),
      slot_(p.n_slots_, nullptr),
      adjoints_(p.n_slots_) {
  for (std::size_t s = p.param_base_; s < p.n_slots_; ++s) slot_[s] = &values_[s];
}

void Tape::bind_parameters(const ParameterVector& theta) {
  const auto& g = program_.graph_;
  if (theta.values.size() != program_.offsets_.back()) {
    throw ShapeError("parameter vector has " + std::to_string(theta.values.size()) +
                     " values, graph declares " + std::to_string(program_.offsets_.back()));
  }
  for (std::size_t i = 0; i < g.parameters.size(); ++i) {
    const auto& p = g.parameters[i];
    Value& v = values_[program_.param_base_ + i];
    if (p.is_vector) {
      v.reshape(1, p.length, 1);
    } else {
      v.reshape(0, 1, 1);
    }
    std::copy_n(theta.values.begin() + static_cast<std::ptrdiff_t>(program_.offsets_[i]), p.length,
                v.data.begin());
  }
}

void Tape::check_inputs(std::span<const Value> inputs) const {
  const auto& specs = program_.graph_.inputs;
  if (inputs.size() != specs.size()) {
    throw ShapeError("expected " + std::to_string(specs.size()) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i].shape;
    const Value& v = inputs[i];
    bool ok = v.rank == s.rank && v.data.size() == v.rows * v.cols;
    for (int axis = 0; ok && axis < s.rank; ++axis) {
      const auto& e = s.dims[static_cast<std::size_t>(axis)];
      ok = e.runtime || e.size == (axis == 0 ? v.rows : v.cols);
    }
    if (!ok) {
      throw ShapeError("input '" + specs[i].name + "' does not match " + to_string(s));
    }
  }
}

void Tape::forward(std::span<const Value> inputs) {
  check_inputs(inputs);
  for (std::size_t i = 0; i < inputs.size(); ++i) slot_[i] = &inputs[i];
  kink_margin_ = std::numeric_limits<double>::infinity();
  std::uint64_t sig = 1469598103934665603ull;
  for (const auto& ins : program_.instrs_) {
    arg_buf_.clear();
    for (std::size_t a : ins.args) arg_buf_.push_back(slot_[a]);
    ops::OpCall call{ins.op, arg_buf_, ins.n_terms, ins.vector_weights, ins.has_bias, ins.index};
    Value& out = values_[ins.out];
    try {
      ops::forward(call, out);
    } catch (const ShapeError& e) {
      throw ShapeError(program_.node_names_[ins.node] + ": " + e.what());
    }
    for (double x : out.data) {
      if (!std::isfinite(x)) throw NumericFault(program_.node_names_[ins.node], "non-finite value");
    }
    if (track_kinks_) {
      const auto k = ops::inspect_kinks(call, out);
      if (ins.arg_dependent) kink_margin_ = std::min(kink_margin_, k.margin);
      sig = (sig ^ k.signature) * 1099511628211ull;
    }
  }
  signature_ = sig;
}

const Value& Tape::output(std::size_t i) const { return *slot_[program_.output_slots_[i]]; }

void Tape::backward(std::span<const Value> seeds, std::span<double> grad) {
  for (std::size_t s = program_.param_base_; s < program_.n_slots_; ++s) {
    if (!program_.slot_needs_grad_[s]) continue;
    const Value& v = values_[s];
    Value& a = adjoints_[s];
    a.reshape(v.rank, v.rows, v.cols);
    std::fill(a.data.begin(), a.data.end(), 0.0);
  }
  for (std::size_t i = 0; i < seeds.size() && i < program_.output_slots_.size(); ++i) {
    const auto s = program_.output_slots_[i];
    if (!program_.slot_needs_grad_[s]) continue;
    Value& a = adjoints_[s];
    if (seeds[i].data.size() != a.data.size()) {
      throw ShapeError("seed for output '" + program_.graph_.outputs[i].name + "' has " +
                       std::to_string(seeds[i].data.size()) + " values, expected " +
                       std::to_string(a.data.size()));
    }
    for (std::size_t k = 0; k < a.data.size(); ++k) a.data[k] += seeds[i].data[k];
  }
  run_backward(grad);
}

void Tape::backward(std::span<const std::span<const double>> seeds, std::span<double> grad) {
  for (std::size_t s = program_.param_base_; s < program_.n_slots_; ++s) {
    if (!program_.slot_needs_grad_[s]) continue;
    const Value& v = values_[s];
    Value& a = adjoints_[s];
    a.reshape(v.rank, v.rows, v.cols);
    std::fill(a.data.begin(), a.data.end(), 0.0);
  }
  for (std::size_t i = 0; i < seeds.size() && i < program_.output_slots_.size(); ++i) {
    const auto s = program_.output_slots_[i];
    if (!program_.slot_needs_grad_[s]) continue;
    Value& a = adjoints_[s];
    if (seeds[i].size() != a.data.size()) {
      throw ShapeError("seed for output '" + program_.graph_.outputs[i].name + "' has the wrong size");
    }
    for (std::size_t k = 0; k < a.data.size(); ++k) a.data[k] += seeds[i][k];
  }
  run_backward(grad);
}

void Tape::run_backward(std::span<double> grad) {
  const auto& instrs = program_.instrs_;
  for (auto it = instrs.rbegin(); it != instrs.rend(); ++it) {
    const auto& ins = *it;
    if (!ins.needs_grad) continue;
    const Value& g = adjoints_[ins.out];
    for (double x : g.data) {
      if (!std::isfinite(x)) {
        throw NumericFault(program_.node_names_[ins.node], "non-finite adjoint");
      }
    }
    arg_buf_.clear();
    adj_buf_.clear();
    for (std::size_t i = 0; i < ins.args.size(); ++i) {
      const auto a = ins.args[i];
      arg_buf_.push_back(slot_[a]);
      adj_buf_.push_back(program_.slot_needs_grad_[a] && flows_through(ins.op, i) ? &adjoints_[a]
                                                                                  : nullptr);
    }
    ops::OpCall call{ins.op, arg_buf_, ins.n_terms, ins.vector_weights, ins.has_bias, ins.index};
    ops::backward(call, values_[ins.out], g, adj_buf_);
  }
  const auto& params = program_.graph_.parameters;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable()) continue;
    const Value& a = adjoints_[program_.param_base_ + i];
    const auto off = program_.offsets_[i];
    for (std::size_t k = 0; k < params[i].length; ++k) grad[off + k] += a.data[k];
  }
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Value> ordered_inputs(const PolicyGraph& g, const ValueMap& inputs) {
  std::vector<Value> out;
  for (const auto& spec : g.inputs) {
    auto it = inputs.find(spec.name);
    if (it == inputs.end()) throw ShapeError("missing input '" + spec.name + "'");
    out.push_back(it->second);
  }
  return out;
}

std::vector<Value> ordered_seeds(const Program& p, const Tape& t, const ValueMap& seed) {
  std::vector<Value> out;
  const auto& g = p.graph();
  for (std::size_t i = 0; i < g.outputs.size(); ++i) {
    auto it = seed.find(g.outputs[i].name);
    if (it != seed.end()) {
      out.push_back(it->second);
    } else {
      Value z = t.output(i);
      std::fill(z.data.begin(), z.data.end(), 0.0);
      out.push_back(std::move(z));
    }
  }
  return out;
}

double objective(const Tape& t, std::span<const Value> seeds) {
  double f = 0.0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const Value& o = t.output(i);
    for (std::size_t k = 0; k < o.data.size(); ++k) f += seeds[i].data[k] * o.data[k];
  }
  return f;
}

}  // namespace

ForwardBackwardResult forward_backward(const PolicyGraph& g, const ParameterVector& theta,
                                       const ValueMap& inputs, const ValueMap& adjoint_seed) {
  Program p(g);
  Tape t(p);
  t.bind_parameters(theta);
  const auto in = ordered_inputs(g, inputs);
  t.forward(in);
  ForwardBackwardResult r;
  for (std::size_t i = 0; i < g.outputs.size(); ++i) r.outputs[g.outputs[i].name] = t.output(i);
  const auto seeds = ordered_seeds(p, t, adjoint_seed);
  std::vector<double> full(p.parameter_count(), 0.0);
  t.backward(std::span<const Value>(seeds), full);
  for (std::size_t pos : p.trainable_positions()) r.gradient.values.push_back(full[pos]);
  return r;
}

double finite_difference_check(const PolicyGraph& g, const ParameterVector& theta,
                               const ValueMap& inputs, const ValueMap& seed, double eps) {
  if (!(eps > 0.0)) throw ContractViolation("finite_difference_check: eps must be positive");
  Program p(g);
  Tape t(p, true);
  const auto in = ordered_inputs(g, inputs);
  t.bind_parameters(theta);
  t.forward(in);
  if (t.kink_margin() < eps) {
    throw NonSmoothPoint("non-smooth point: evaluation is within " + std::to_string(t.kink_margin()) +
                         " of a kink");
  }
  const auto base_sig = t.branch_signature();
  const auto seeds = ordered_seeds(p, t, seed);
  std::vector<double> full(p.parameter_count(), 0.0);
  t.backward(std::span<const Value>(seeds), full);

  double worst = 0.0;
  ParameterVector probe = theta;
  for (std::size_t pos : p.trainable_positions()) {
    const double orig = probe.values[pos];
    probe.values[pos] = orig + eps;
    t.bind_parameters(probe);
    t.forward(in);
    const bool same_plus = t.branch_signature() == base_sig;
    const double f_plus = objective(t, seeds);
    probe.values[pos] = orig - eps;
    t.bind_parameters(probe);
    t.forward(in);
    const bool same_minus = t.branch_signature() == base_sig;
    const double f_minus = objective(t, seeds);
    probe.values[pos] = orig;
    if (!same_plus || !same_minus) {
      throw NonSmoothPoint("non-smooth point: a probe of width " + std::to_string(eps) +
                           " changes a branch decision");
    }
    const double numeric = (f_plus - f_minus) / (2.0 * eps);
    const double err = std::fabs(full[pos] - numeric) / std::max(1.0, std::fabs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

std::span<const ops::KernelRule> kernel_vjp_table() { return ops::kernel_rules(); }

}  // namespace kim
