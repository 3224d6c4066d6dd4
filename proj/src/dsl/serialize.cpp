#include <charconv>
#include <cmath>
#include <set>
#include <unordered_map>

#include "kim/dsl.hpp"

namespace kim::dsl {

namespace {

std::string number(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string value_text(const Parameter& p, const std::vector<double>& v) {
  if (!p.is_vector) return number(v.at(0));
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += number(v[i]);
  }
  return out + "]";
}

int precedence(const Expr& e) {
  if (e.kind != ExprKind::call) return 4;
  switch (e.op) {
    case OpKind::add:
    case OpKind::sub:
      return 1;
    case OpKind::mul:
      return 2;
    case OpKind::neg:
      return 3;
    default:
      return 4;
  }
}

void emit(const Expr& e, std::string& out);

void emit_wrapped(const Expr& e, bool wrap, std::string& out) {
  if (wrap) out += "(";
  emit(e, out);
  if (wrap) out += ")";
}

void emit_args(const std::vector<Expr>& args, std::string& out) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (i) out += ", ";
    emit(args[i], out);
  }
}

void emit(const Expr& e, std::string& out) {
  switch (e.kind) {
    case ExprKind::ref:
      out += e.name;
      return;
    case ExprKind::literal:
      out += e.integer ? std::to_string(std::llround(e.literal)) : number(e.literal);
      return;
    case ExprKind::list:
      out += "[";
      emit_args(e.args, out);
      out += "]";
      return;
    case ExprKind::call:
      break;
  }
  const int p = precedence(e);
  if (p == 1 || p == 2) {
    // Left-associative: the right operand needs parentheses at equal precedence.
    emit_wrapped(e.args[0], precedence(e.args[0]) < p, out);
    out += e.op == OpKind::add ? " + " : e.op == OpKind::sub ? " - " : " * ";
    emit_wrapped(e.args[1], precedence(e.args[1]) <= p, out);
    return;
  }
  if (p == 3) {
    out += "-";
    emit_wrapped(e.args[0], precedence(e.args[0]) < 3, out);
    return;
  }
  out += op_name(e.op);
  out += "(";
  emit_args(e.args, out);
  out += ")";
}

std::string extent_text(const Extent& e) { return e.runtime ? e.symbol : std::to_string(e.size); }

}  // namespace

std::string serialize(const PolicyGraph& g) {
  std::string out = "model " + g.name + "\n";
  if (!g.inputs.empty()) out += "\n";
  for (const auto& in : g.inputs) {
    out += "input " + in.name + ": " + (in.boolean ? "bool" : "float");
    if (in.shape.rank >= 1) {
      out += "[" + extent_text(in.shape.dims[0]);
      if (in.shape.rank == 2) out += ", " + extent_text(in.shape.dims[1]);
      out += "]";
    }
    out += "\n";
  }
  if (!g.parameters.empty()) out += "\n";
  for (const auto& p : g.parameters) {
    out += "param " + p.name + ": " +
           (p.kind == ParamKind::gradient ? "gradient" : "nongradient");
    if (p.is_vector) out += "[" + std::to_string(p.length) + "]";
    if (p.init) out += " = " + value_text(p, *p.init);
    if (p.correlation != Correlation::none) {
      out += p.correlation == Correlation::positive ? " sign(+)" : " sign(-)";
    }
    if (!p.grid.empty()) {
      out += " grid(";
      for (std::size_t i = 0; i < p.grid.size(); ++i) {
        if (i) out += ", ";
        out += value_text(p, p.grid[i]);
      }
      out += ")";
    }
    if (p.frozen) out += " frozen";
    out += "\n";
  }
  if (!g.latents.empty()) out += "\n";
  for (const auto& n : g.latents) {
    out += "latent " + n.name + " = ";
    emit(n.expr, out);
    out += "\n";
  }
  if (!g.outputs.empty()) out += "\n";
  for (const auto& n : g.outputs) {
    out += "output " + n.name + " = ";
    emit(n.expr, out);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void collect_refs(const Expr& e, std::set<std::string>& refs) {
  if (e.kind == ExprKind::ref) refs.insert(e.name);
  for (const auto& a : e.args) collect_refs(a, refs);
}

}  // namespace

std::vector<Warning> lint(const PolicyGraph& g) {
  std::unordered_map<std::string, std::set<std::string>> refs;
  std::set<std::string> used;
  for (const auto* nodes : {&g.latents, &g.outputs}) {
    for (const auto& n : *nodes) {
      collect_refs(n.expr, refs[n.name]);
      used.insert(refs[n.name].begin(), refs[n.name].end());
    }
  }

  std::vector<Warning> out;
  for (const auto& in : g.inputs) {
    if (!used.count(in.name)) out.push_back({in.name, "input is never used"});
  }
  for (const auto& p : g.parameters) {
    if (!used.count(p.name)) out.push_back({p.name, "parameter is never used"});
  }
  for (const auto& l : g.latents) {
    if (!used.count(l.name)) out.push_back({l.name, "latent is never used"});
  }

  std::set<std::string> input_dependent;
  for (const auto& in : g.inputs) input_dependent.insert(in.name);
  for (const auto& name : topological_order(g)) {
    for (const auto& r : refs[name]) {
      if (input_dependent.count(r)) {
        input_dependent.insert(name);
        break;
      }
    }
  }
  for (const auto& o : g.outputs) {
    if (!input_dependent.count(o.name)) out.push_back({o.name, "output independent of inputs"});
  }
  return out;
}

}  // namespace kim::dsl
