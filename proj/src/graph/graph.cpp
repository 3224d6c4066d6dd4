#include "kim/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <queue>
#include <sstream>
#include <unordered_map>

#include "kim/ops.hpp"

namespace kim {

namespace {

constexpr std::array<std::string_view, kOpKindCount> kOpNames{
    "add",         "sub",          "mul",         "neg",          "lin_combine",
    "abs",         "clip",         "min2",        "max2",         "where",
    "nor",         "not",          "any",         "stack",        "col",
    "window",      "sqrt",         "square",      "lt",           "gt",
    "reduce_min",  "reduce_mean",  "argmin_index", "euclid_norm2", "tanh",
    "one_minus",
};

}  // namespace

std::string_view op_name(OpKind op) { return kOpNames[static_cast<std::size_t>(op)]; }

std::optional<OpKind> op_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kOpNames.size(); ++i) {
    if (kOpNames[i] == name) return static_cast<OpKind>(i);
  }
  return std::nullopt;
}

bool is_boolean_op(OpKind op) {
  switch (op) {
    case OpKind::nor:
    case OpKind::logical_not:
    case OpKind::any:
    case OpKind::lt:
    case OpKind::gt:
      return true;
    default:
      return false;
  }
}

Expr Expr::ref(std::string n, SourceSpan s) {
  Expr e;
  e.kind = ExprKind::ref;
  e.name = std::move(n);
  e.span = s;
  return e;
}

Expr Expr::lit(double v, bool is_int, SourceSpan s) {
  Expr e;
  e.kind = ExprKind::literal;
  e.literal = v;
  e.integer = is_int;
  e.span = s;
  return e;
}

Expr Expr::call(OpKind op, std::vector<Expr> args, SourceSpan s) {
  Expr e;
  e.kind = ExprKind::call;
  e.op = op;
  e.args = std::move(args);
  e.span = s;
  return e;
}

Expr Expr::list(std::vector<Expr> items, SourceSpan s) {
  Expr e;
  e.kind = ExprKind::list;
  e.args = std::move(items);
  e.span = s;
  return e;
}

bool Expr::operator==(const Expr& o) const {
  if (kind != o.kind) return false;
  switch (kind) {
    case ExprKind::ref:
      return name == o.name;
    case ExprKind::literal:
      return integer == o.integer &&
             std::memcmp(&literal, &o.literal, sizeof(double)) == 0;
    case ExprKind::call:
      return op == o.op && args == o.args;
    case ExprKind::list:
      return args == o.args;
  }
  return false;
}

ValueShape ValueShape::vector(std::size_t n) {
  ValueShape s;
  s.rank = 1;
  s.dims[0].size = n;
  return s;
}

ValueShape ValueShape::matrix(std::size_t r, std::size_t c) {
  ValueShape s;
  s.rank = 2;
  s.dims[0].size = r;
  s.dims[1].size = c;
  return s;
}

namespace {

std::string extent_str(const Extent& e) {
  if (e.runtime) return e.symbol.empty() ? "?" : e.symbol;
  return std::to_string(e.size);
}

}  // namespace

std::string to_string(const ValueShape& s) {
  if (s.rank == 0) return "scalar";
  std::string out = "[" + extent_str(s.dims[0]);
  if (s.rank == 2) out += ", " + extent_str(s.dims[1]);
  return out + "]";
}

const Parameter* PolicyGraph::find_parameter(std::string_view n) const {
  for (const auto& p : parameters) {
    if (p.name == n) return &p;
  }
  return nullptr;
}

const InputSpec* PolicyGraph::find_input(std::string_view n) const {
  for (const auto& i : inputs) {
    if (i.name == n) return &i;
  }
  return nullptr;
}

std::string_view to_string(DiagnosticCategory c) {
  switch (c) {
    case DiagnosticCategory::cycle:
      return "cycle";
    case DiagnosticCategory::unresolved_name:
      return "unresolved-name";
    case DiagnosticCategory::literal_in_expr:
      return "literal-in-expr";
    case DiagnosticCategory::shape_mismatch:
      return "shape-mismatch";
    case DiagnosticCategory::bad_grid:
      return "bad-grid";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Name resolution and dependency structure
// ---------------------------------------------------------------------------

namespace {

enum class SymbolKind { input, parameter, latent, output };

struct Symbol {
  SymbolKind kind;
  std::size_t index;
};

using SymbolTable = std::unordered_map<std::string, Symbol>;

SymbolTable build_symbols(const PolicyGraph& g, std::vector<Diagnostic>* diags) {
  SymbolTable t;
  auto add = [&](const std::string& name, SymbolKind k, std::size_t i, SourceSpan span) {
    if (!t.emplace(name, Symbol{k, i}).second && diags) {
      diags->push_back({name, DiagnosticCategory::unresolved_name,
                        "name '" + name + "' is declared more than once", span});
    }
  };
  for (std::size_t i = 0; i < g.inputs.size(); ++i) {
    add(g.inputs[i].name, SymbolKind::input, i, g.inputs[i].span);
  }
  for (std::size_t i = 0; i < g.parameters.size(); ++i) {
    add(g.parameters[i].name, SymbolKind::parameter, i, g.parameters[i].span);
  }
  for (std::size_t i = 0; i < g.latents.size(); ++i) {
    add(g.latents[i].name, SymbolKind::latent, i, g.latents[i].span);
  }
  for (std::size_t i = 0; i < g.outputs.size(); ++i) {
    add(g.outputs[i].name, SymbolKind::output, i, g.outputs[i].span);
  }
  return t;
}

void collect_refs(const Expr& e, std::vector<const Expr*>& out) {
  if (e.kind == ExprKind::ref) {
    out.push_back(&e);
    return;
  }
  for (const auto& a : e.args) collect_refs(a, out);
}

// Latent indices each node depends on. Node ids: latents first, then outputs.
std::vector<std::vector<std::size_t>> latent_deps(const PolicyGraph& g, const SymbolTable& t) {
  std::vector<std::vector<std::size_t>> deps(g.latents.size() + g.outputs.size());
  auto fill = [&](const NodeSpec& n, std::size_t id) {
    std::vector<const Expr*> refs;
    collect_refs(n.expr, refs);
    for (const Expr* r : refs) {
      auto it = t.find(r->name);
      if (it != t.end() && it->second.kind == SymbolKind::latent) {
        deps[id].push_back(it->second.index);
      }
    }
    std::sort(deps[id].begin(), deps[id].end());
    deps[id].erase(std::unique(deps[id].begin(), deps[id].end()), deps[id].end());
  };
  for (std::size_t i = 0; i < g.latents.size(); ++i) fill(g.latents[i], i);
  for (std::size_t i = 0; i < g.outputs.size(); ++i) fill(g.outputs[i], g.latents.size() + i);
  return deps;
}

// Every elementary cycle closed by a DFS back edge, as latent index paths.
std::vector<std::vector<std::size_t>> find_cycles(const std::vector<std::vector<std::size_t>>& deps,
                                                  std::size_t n_latents) {
  std::vector<std::vector<std::size_t>> cycles;
  std::vector<int> color(n_latents, 0);
  std::vector<std::size_t> stack;
  std::function<void(std::size_t)> dfs = [&](std::size_t u) {
    color[u] = 1;
    stack.push_back(u);
    for (std::size_t v : deps[u]) {
      if (color[v] == 0) {
        dfs(v);
      } else if (color[v] == 1) {
        auto it = std::find(stack.begin(), stack.end(), v);
        cycles.emplace_back(it, stack.end());
      }
    }
    stack.pop_back();
    color[u] = 2;
  };
  for (std::size_t i = 0; i < n_latents; ++i) {
    if (color[i] == 0) dfs(i);
  }
  return cycles;
}

std::size_t arity_min(OpKind op) {
  switch (op) {
    case OpKind::neg:
    case OpKind::abs:
    case OpKind::sqrt:
    case OpKind::square:
    case OpKind::tanh:
    case OpKind::one_minus:
    case OpKind::logical_not:
    case OpKind::any:
    case OpKind::reduce_min:
    case OpKind::reduce_mean:
    case OpKind::argmin_index:
    case OpKind::stack:
      return 1;
    case OpKind::clip:
    case OpKind::where:
    case OpKind::window:
      return 3;
    default:
      return 2;
  }
}

std::size_t arity_max(OpKind op) {
  switch (op) {
    case OpKind::stack:
      return 1u << 20;
    case OpKind::lin_combine:
      return 3;
    default:
      return arity_min(op);
  }
}

bool structural_slot(OpKind op, std::size_t arg) {
  return (op == OpKind::col && arg == 1) || (op == OpKind::window && (arg == 1 || arg == 2));
}

struct ExprChecker {
  const PolicyGraph& g;
  const SymbolTable& symbols;
  std::vector<Diagnostic>& diags;
  std::string node;

  void report(DiagnosticCategory c, std::string msg, SourceSpan span) {
    diags.push_back({node, c, std::move(msg), span});
  }

  void check(const Expr& e, std::optional<OpKind> parent, std::size_t slot) {
    switch (e.kind) {
      case ExprKind::ref: {
        auto it = symbols.find(e.name);
        if (it == symbols.end()) {
          report(DiagnosticCategory::unresolved_name, "unknown name '" + e.name + "'", e.span);
        } else if (it->second.kind == SymbolKind::output) {
          report(DiagnosticCategory::unresolved_name,
                 "output '" + e.name + "' cannot be referenced by other nodes", e.span);
        }
        return;
      }
      case ExprKind::literal: {
        const bool ok = parent && structural_slot(*parent, slot) && e.integer && e.literal >= 0;
        if (!ok) {
          std::ostringstream msg;
          msg << "constant " << e.literal
              << " in expression; constants must be declared as parameters";
          report(DiagnosticCategory::literal_in_expr, msg.str(), e.span);
        }
        return;
      }
      case ExprKind::list: {
        if (!parent || *parent != OpKind::lin_combine || slot > 1) {
          report(DiagnosticCategory::shape_mismatch, "list outside lin_combine", e.span);
        }
        if (e.args.empty()) report(DiagnosticCategory::shape_mismatch, "empty list", e.span);
        for (const auto& a : e.args) check(a, std::nullopt, 0);
        return;
      }
      case ExprKind::call: {
        const auto n = e.args.size();
        if (n < arity_min(e.op) || n > arity_max(e.op)) {
          report(DiagnosticCategory::shape_mismatch,
                 std::string(op_name(e.op)) + " called with " + std::to_string(n) + " arguments",
                 e.span);
        }
        if (e.op == OpKind::col && n == 2 && e.args[1].kind != ExprKind::literal) {
          report(DiagnosticCategory::shape_mismatch, "col index must be an integer literal",
                 e.args[1].span);
        }
        if (e.op == OpKind::lin_combine && n >= 1 && e.args[0].kind != ExprKind::list) {
          report(DiagnosticCategory::shape_mismatch, "lin_combine terms must be a [list]",
                 e.args[0].span);
        }
        for (std::size_t i = 0; i < n; ++i) check(e.args[i], e.op, i);
        return;
      }
    }
  }
};

// --- static shape inference -------------------------------------------------

struct ShapeFailure {
  std::string message;
  SourceSpan span;
};

bool extent_compatible(const Extent& a, const Extent& b) {
  return a.runtime || b.runtime || a.size == b.size;
}

bool shape_compatible(const ValueShape& a, const ValueShape& b) {
  if (a.rank != b.rank) return false;
  for (int i = 0; i < a.rank; ++i) {
    if (!extent_compatible(a.dims[static_cast<std::size_t>(i)], b.dims[static_cast<std::size_t>(i)])) {
      return false;
    }
  }
  return true;
}

struct ShapeInferrer {
  const PolicyGraph& g;
  const SymbolTable& symbols;
  const std::vector<ValueShape>& latent_shapes;

  ValueShape broadcast(const ValueShape& a, const ValueShape& b, const Expr& at) const {
    if (a.rank == 0) return b;
    if (b.rank == 0) return a;
    if (!shape_compatible(a, b)) {
      throw ShapeFailure{std::string(op_name(at.op)) + ": shapes " + to_string(a) + " and " +
                             to_string(b) + " are incompatible",
                         at.span};
    }
    // Prefer the operand with more fixed extents.
    return a.dims[0].runtime ? b : a;
  }

  void require_scalar(const ValueShape& s, const Expr& at, const char* what) const {
    if (s.rank != 0) {
      throw ShapeFailure{std::string(op_name(at.op)) + ": " + what + " must be a scalar, got " +
                             to_string(s),
                         at.span};
    }
  }

  ValueShape infer(const Expr& e) const {
    switch (e.kind) {
      case ExprKind::ref: {
        const Symbol& s = symbols.at(e.name);
        switch (s.kind) {
          case SymbolKind::input:
            return g.inputs[s.index].shape;
          case SymbolKind::parameter:
            return g.parameters[s.index].shape();
          case SymbolKind::latent:
            return latent_shapes[s.index];
          case SymbolKind::output:
            break;
        }
        throw ShapeFailure{"bad reference", e.span};
      }
      case ExprKind::literal:
        return ValueShape::scalar();
      case ExprKind::list:
        throw ShapeFailure{"list outside lin_combine", e.span};
      case ExprKind::call:
        return infer_call(e);
    }
    return {};
  }

  ValueShape infer_call(const Expr& e) const {
    const auto& a = e.args;
    switch (e.op) {
      case OpKind::add:
      case OpKind::sub:
      case OpKind::mul:
      case OpKind::min2:
      case OpKind::max2:
      case OpKind::nor:
      case OpKind::euclid_norm2:
        return broadcast(infer(a[0]), infer(a[1]), e);
      case OpKind::neg:
      case OpKind::abs:
      case OpKind::sqrt:
      case OpKind::square:
      case OpKind::tanh:
      case OpKind::one_minus:
      case OpKind::logical_not:
        return infer(a[0]);
      case OpKind::lt:
      case OpKind::gt: {
        require_scalar(infer(a[1]), e, "threshold");
        return infer(a[0]);
      }
      case OpKind::clip:
        require_scalar(infer(a[1]), e, "lower bound");
        require_scalar(infer(a[2]), e, "upper bound");
        return infer(a[0]);
      case OpKind::where: {
        const auto branches = broadcast(infer(a[1]), infer(a[2]), e);
        return broadcast(infer(a[0]), branches, e);
      }
      case OpKind::any:
        return ValueShape::scalar();
      case OpKind::stack:
        for (const auto& x : a) require_scalar(infer(x), e, "stacked value");
        return ValueShape::vector(a.size());
      case OpKind::col: {
        const auto x = infer(a[0]);
        const auto j = static_cast<std::size_t>(a[1].literal);
        if (x.rank == 0) throw ShapeFailure{"col: cannot index a scalar", e.span};
        const auto& last = x.dims[static_cast<std::size_t>(x.rank - 1)];
        if (!last.runtime && j >= last.size) {
          throw ShapeFailure{"col: index " + std::to_string(j) + " out of range for " + to_string(x),
                             e.span};
        }
        if (x.rank == 1) return ValueShape::scalar();
        ValueShape v;
        v.rank = 1;
        v.dims[0] = x.dims[0];
        return v;
      }
      case OpKind::window: {
        auto x = infer(a[0]);
        if (x.rank == 0) throw ShapeFailure{"window: cannot slice a scalar", e.span};
        require_scalar(infer(a[1]), e, "window start");
        require_scalar(infer(a[2]), e, "window length");
        x.dims[0] = Extent{0, true, ""};
        return x;
      }
      case OpKind::reduce_min:
      case OpKind::reduce_mean:
      case OpKind::argmin_index: {
        const auto x = infer(a[0]);
        if (x.rank > 1) {
          throw ShapeFailure{std::string(op_name(e.op)) + ": expects a vector, got " + to_string(x),
                             e.span};
        }
        return ValueShape::scalar();
      }
      case OpKind::lin_combine: {
        const auto& terms = a[0].args;
        std::vector<ValueShape> ts;
        for (const auto& t : terms) ts.push_back(infer(t));
        if (a.size() == 3) require_scalar(infer(a[2]), e, "bias");
        if (a[1].kind == ExprKind::list) {
          if (a[1].args.size() != terms.size()) {
            throw ShapeFailure{"lin_combine: " + std::to_string(a[1].args.size()) +
                                   " weights for " + std::to_string(terms.size()) + " terms",
                               e.span};
          }
          for (const auto& w : a[1].args) require_scalar(infer(w), e, "weight");
        } else {
          const auto w = infer(a[1]);
          if (w.rank != 1) {
            throw ShapeFailure{"lin_combine: weights must be a list or a vector parameter", e.span};
          }
          if (terms.size() == 1 && ts[0].rank != 0) {
            if (ts[0].rank != 1 || !extent_compatible(ts[0].dims[0], w.dims[0])) {
              throw ShapeFailure{"lin_combine: weight " + to_string(w) +
                                     " does not match term " + to_string(ts[0]),
                                 e.span};
            }
            return ValueShape::scalar();
          }
          if (!w.dims[0].runtime && w.dims[0].size != terms.size()) {
            throw ShapeFailure{"lin_combine: weight " + to_string(w) + " for " +
                                   std::to_string(terms.size()) + " terms",
                               e.span};
          }
        }
        ValueShape out = ts[0];
        for (std::size_t i = 1; i < ts.size(); ++i) out = broadcast(out, ts[i], e);
        return out;
      }
    }
    return {};
  }
};

std::vector<std::size_t> topo_ids(const PolicyGraph& g, const SymbolTable& t) {
  const auto deps = latent_deps(g, t);
  const std::size_t nl = g.latents.size();
  const std::size_t n = deps.size();
  std::vector<std::size_t> indegree(n, 0);
  std::vector<std::vector<std::size_t>> users(nl);
  for (std::size_t id = 0; id < n; ++id) {
    indegree[id] = deps[id].size();
    for (std::size_t d : deps[id]) users[d].push_back(id);
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t id = 0; id < n; ++id) {
    if (indegree[id] == 0) ready.push(id);
  }
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const auto id = ready.top();
    ready.pop();
    order.push_back(id);
    if (id < nl) {
      for (std::size_t u : users[id]) {
        if (--indegree[u] == 0) ready.push(u);
      }
    }
  }
  if (order.size() != n) {
    const auto cycles = find_cycles(deps, nl);
    std::string msg = "dependency cycle";
    if (!cycles.empty()) {
      msg += ":";
      for (std::size_t i : cycles.front()) msg += " " + g.latents[i].name + " ->";
      msg += " " + g.latents[cycles.front().front()].name;
    }
    throw StructuralError(msg);
  }
  return order;
}

const NodeSpec& node_by_id(const PolicyGraph& g, std::size_t id) {
  return id < g.latents.size() ? g.latents[id] : g.outputs[id - g.latents.size()];
}

}  // namespace

std::vector<Diagnostic> validate_graph(const PolicyGraph& g) {
  std::vector<Diagnostic> diags;
  const auto symbols = build_symbols(g, &diags);

  for (const auto& in : g.inputs) {
    for (int i = 1; i < in.shape.rank; ++i) {
      if (in.shape.dims[static_cast<std::size_t>(i)].runtime) {
        diags.push_back({in.name, DiagnosticCategory::shape_mismatch,
                         "runtime extents are only allowed on the first axis", in.span});
      }
    }
  }

  for (const auto& p : g.parameters) {
    auto bad = [&](DiagnosticCategory c, const std::string& m) {
      diags.push_back({p.name, c, m, p.span});
    };
    if (p.length == 0) bad(DiagnosticCategory::shape_mismatch, "parameter has no elements");
    if (p.init && p.init->size() != p.length) {
      bad(DiagnosticCategory::shape_mismatch,
          "init has " + std::to_string(p.init->size()) + " values, expected " +
              std::to_string(p.length));
    }
    if (!p.grid.empty()) {
      if (p.kind != ParamKind::non_gradient) {
        bad(DiagnosticCategory::bad_grid, "grid declared on a gradient parameter");
      }
      for (const auto& v : p.grid) {
        if (v.size() != p.length) {
          bad(DiagnosticCategory::bad_grid, "grid entry has " + std::to_string(v.size()) +
                                                " values, expected " + std::to_string(p.length));
        }
      }
      if (p.init && std::find(p.grid.begin(), p.grid.end(), *p.init) == p.grid.end()) {
        bad(DiagnosticCategory::bad_grid, "init value is not one of the grid candidates");
      }
    }
  }

  for (const auto* nodes : {&g.latents, &g.outputs}) {
    for (const auto& n : *nodes) {
      ExprChecker checker{g, symbols, diags, n.name};
      checker.check(n.expr, std::nullopt, 0);
    }
  }

  const auto deps = latent_deps(g, symbols);
  for (const auto& cyc : find_cycles(deps, g.latents.size())) {
    std::string msg = "dependency cycle:";
    for (std::size_t i : cyc) msg += " " + g.latents[i].name + " ->";
    msg += " " + g.latents[cyc.front()].name;
    diags.push_back({g.latents[cyc.front()].name, DiagnosticCategory::cycle, msg,
                     g.latents[cyc.front()].span});
  }

  if (diags.empty()) {
    std::vector<ValueShape> shapes(g.latents.size());
    ShapeInferrer inf{g, symbols, shapes};
    for (std::size_t id : topo_ids(g, symbols)) {
      const NodeSpec& n = node_by_id(g, id);
      try {
        const auto s = inf.infer(n.expr);
        if (id < g.latents.size()) shapes[id] = s;
      } catch (const ShapeFailure& f) {
        diags.push_back({n.name, DiagnosticCategory::shape_mismatch, f.message, f.span});
      }
    }
  }
  return diags;
}

void require_valid(const PolicyGraph& g) {
  const auto diags = validate_graph(g);
  if (diags.empty()) return;
  std::string msg = "invalid graph '" + g.name + "':";
  for (const auto& d : diags) {
    msg += "\n  " + d.node + ": [" + std::string(to_string(d.category)) + "] " + d.message;
  }
  throw StructuralError(msg);
}

std::vector<std::string> topological_order(const PolicyGraph& g) {
  const auto symbols = build_symbols(g, nullptr);
  std::vector<std::string> names;
  for (std::size_t id : topo_ids(g, symbols)) names.push_back(node_by_id(g, id).name);
  return names;
}

ParameterCensus parameter_census(const PolicyGraph& g) {
  ParameterCensus c;
  for (const auto& p : g.parameters) {
    (p.kind == ParamKind::gradient ? c.gradient : c.non_gradient) += p.length;
    if (p.frozen) c.frozen += p.length;
  }
  return c;
}

void infer_shapes(PolicyGraph& g) {
  const auto symbols = build_symbols(g, nullptr);
  std::vector<ValueShape> shapes(g.latents.size());
  ShapeInferrer inf{g, symbols, shapes};
  for (std::size_t id : topo_ids(g, symbols)) {
    NodeSpec& n = id < g.latents.size() ? g.latents[id] : g.outputs[id - g.latents.size()];
    try {
      n.shape = inf.infer(n.expr);
    } catch (const ShapeFailure& f) {
      throw ShapeError(n.name + ": " + f.message);
    }
    if (id < g.latents.size()) shapes[id] = n.shape;
  }
}

std::vector<std::size_t> parameter_offsets(const PolicyGraph& g) {
  std::vector<std::size_t> off;
  off.reserve(g.parameters.size() + 1);
  std::size_t total = 0;
  for (const auto& p : g.parameters) {
    off.push_back(total);
    total += p.length;
  }
  off.push_back(total);
  return off;
}

ParameterVector init_parameters(const PolicyGraph& g) {
  ParameterVector theta;
  for (const auto& p : g.parameters) {
    if (p.init) {
      theta.values.insert(theta.values.end(), p.init->begin(), p.init->end());
      continue;
    }
    const double v = p.correlation == Correlation::positive   ? 0.1
                     : p.correlation == Correlation::negative ? -0.1
                                                              : 0.0;
    theta.values.insert(theta.values.end(), p.length, v);
  }
  return theta;
}

// ---------------------------------------------------------------------------
// Reference interpreter
// ---------------------------------------------------------------------------

namespace {

void check_input_binding(const PolicyGraph& g, const ValueMap& inputs) {
  std::unordered_map<std::string, std::size_t> runtime_extents;
  for (const auto& spec : g.inputs) {
    auto it = inputs.find(spec.name);
    if (it == inputs.end()) throw ShapeError("missing input '" + spec.name + "'");
    const Value& v = it->second;
    if (v.rank != spec.shape.rank) {
      throw ShapeError("input '" + spec.name + "' has rank " + std::to_string(v.rank) +
                       ", expected " + to_string(spec.shape));
    }
    for (int axis = 0; axis < v.rank; ++axis) {
      const auto& e = spec.shape.dims[static_cast<std::size_t>(axis)];
      const auto actual = axis == 0 ? v.rows : v.cols;
      if (e.runtime) {
        auto [pos, fresh] = runtime_extents.emplace(e.symbol, actual);
        if (!fresh && pos->second != actual && !e.symbol.empty()) {
          throw ShapeError("runtime extent '" + e.symbol + "' bound to both " +
                           std::to_string(pos->second) + " and " + std::to_string(actual));
        }
      } else if (e.size != actual) {
        throw ShapeError("input '" + spec.name + "' axis " + std::to_string(axis) + " has extent " +
                         std::to_string(actual) + ", expected " + std::to_string(e.size));
      }
    }
    if (v.data.size() != v.rows * v.cols) {
      throw ShapeError("input '" + spec.name + "' storage does not match its extents");
    }
  }
  for (const auto& [name, v] : inputs) {
    if (!g.find_input(name)) throw ShapeError("unknown input '" + name + "'");
  }
}

struct Interpreter {
  const PolicyGraph& g;
  const SymbolTable& symbols;
  const ParameterVector& theta;
  const std::vector<std::size_t>& offsets;
  const ValueMap& inputs;
  std::vector<Value> latents;

  Value param_value(std::size_t i) const {
    const auto& p = g.parameters[i];
    std::vector<double> v(theta.values.begin() + static_cast<std::ptrdiff_t>(offsets[i]),
                          theta.values.begin() + static_cast<std::ptrdiff_t>(offsets[i] + p.length));
    return p.is_vector ? Value::vector(std::move(v)) : Value::scalar(v[0]);
  }

  Value eval(const Expr& e) const {
    switch (e.kind) {
      case ExprKind::ref: {
        const Symbol& s = symbols.at(e.name);
        switch (s.kind) {
          case SymbolKind::input:
            return inputs.at(e.name);
          case SymbolKind::parameter:
            return param_value(s.index);
          case SymbolKind::latent:
            return latents[s.index];
          case SymbolKind::output:
            break;
        }
        throw StructuralError("output '" + e.name + "' referenced");
      }
      case ExprKind::literal:
        return Value::scalar(e.literal);
      case ExprKind::list:
        throw StructuralError("list outside lin_combine");
      case ExprKind::call:
        break;
    }
    std::vector<Value> vals;
    ops::OpCall call;
    call.op = e.op;
    if (e.op == OpKind::lin_combine) {
      for (const auto& t : e.args[0].args) vals.push_back(eval(t));
      call.n_terms = vals.size();
      if (e.args[1].kind == ExprKind::list) {
        for (const auto& w : e.args[1].args) vals.push_back(eval(w));
      } else {
        vals.push_back(eval(e.args[1]));
        call.vector_weights = true;
      }
      if (e.args.size() == 3) {
        vals.push_back(eval(e.args[2]));
        call.has_bias = true;
      }
    } else if (e.op == OpKind::col) {
      vals.push_back(eval(e.args[0]));
      call.index = static_cast<std::size_t>(e.args[1].literal);
    } else {
      for (const auto& a : e.args) vals.push_back(eval(a));
    }
    std::vector<const Value*> ptrs;
    for (const auto& v : vals) ptrs.push_back(&v);
    call.args = ptrs;
    Value out;
    ops::forward(call, out);
    return out;
  }
};

void check_finite(const std::string& node, const Value& v) {
  for (double x : v.data) {
    if (!std::isfinite(x)) throw NumericFault(node, "non-finite value");
  }
}

}  // namespace

ValueMap evaluate(const PolicyGraph& g, const ParameterVector& theta, const ValueMap& inputs) {
  const auto offsets = parameter_offsets(g);
  if (theta.values.size() != offsets.back()) {
    throw ShapeError("parameter vector has " + std::to_string(theta.values.size()) +
                     " values, graph declares " + std::to_string(offsets.back()));
  }
  check_input_binding(g, inputs);
  const auto symbols = build_symbols(g, nullptr);
  Interpreter interp{g, symbols, theta, offsets, inputs, std::vector<Value>(g.latents.size())};
  ValueMap out;
  for (std::size_t id : topo_ids(g, symbols)) {
    const NodeSpec& n = node_by_id(g, id);
    Value v;
    try {
      v = interp.eval(n.expr);
    } catch (const ShapeError& e) {
      throw ShapeError(n.name + ": " + e.what());
    }
    check_finite(n.name, v);
    if (id < g.latents.size()) {
      interp.latents[id] = std::move(v);
    } else {
      out.emplace(n.name, std::move(v));
    }
  }
  return out;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace kim
