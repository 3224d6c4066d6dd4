#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kim/error.hpp"
#include "kim/value.hpp"

namespace kim {

// ---------------------------------------------------------------------------
// Policy structure: inputs, parameters, latent nodes and outputs. Operation
// instances live inside node expressions; edges are the name references.
// ---------------------------------------------------------------------------

enum class OpKind : std::uint8_t {
  add,
  sub,
  mul,
  neg,
  lin_combine,
  abs,
  clip,
  min2,
  max2,
  where,
  nor,
  logical_not,
  any,
  stack,
  col,
  window,
  sqrt,
  square,
  lt,
  gt,
  reduce_min,
  reduce_mean,
  argmin_index,
  euclid_norm2,
  tanh,
  one_minus,
};

inline constexpr std::size_t kOpKindCount = 26;

/// DSL spelling of an op ("lin_combine", "not", ...).
std::string_view op_name(OpKind op);
std::optional<OpKind> op_from_name(std::string_view name);
/// Ops whose result is a 0/1 mask and which pass no gradient.
bool is_boolean_op(OpKind op);

struct SourceSpan {
  int line = 0;
  int column = 0;
  int length = 0;
};

enum class ExprKind : std::uint8_t { ref, literal, call, list };

/// Expression tree. `list` only appears as the term/weight list of lin_combine.
struct Expr {
  ExprKind kind = ExprKind::ref;
  std::string name;           // ref
  double literal = 0.0;       // literal
  bool integer = false;       // literal was written without fraction/exponent
  OpKind op = OpKind::add;    // call
  std::vector<Expr> args;     // call / list
  SourceSpan span;

  static Expr ref(std::string n, SourceSpan s = {});
  static Expr lit(double v, bool is_int, SourceSpan s = {});
  static Expr call(OpKind op, std::vector<Expr> args, SourceSpan s = {});
  static Expr list(std::vector<Expr> items, SourceSpan s = {});

  /// Structural equality; spans are ignored.
  bool operator==(const Expr& other) const;
};

/// One axis extent; `runtime` extents are resolved when inputs are bound.
struct Extent {
  std::size_t size = 0;
  bool runtime = false;
  std::string symbol;  // e.g. "L"

  bool operator==(const Extent&) const = default;
};

struct ValueShape {
  int rank = 0;
  std::array<Extent, 2> dims{};

  static ValueShape scalar() { return {}; }
  static ValueShape vector(std::size_t n);
  static ValueShape matrix(std::size_t r, std::size_t c);

  bool operator==(const ValueShape&) const = default;
};

std::string to_string(const ValueShape& s);

struct InputSpec {
  std::string name;
  ValueShape shape;
  bool boolean = false;
  SourceSpan span;

  bool operator==(const InputSpec& o) const {
    return name == o.name && shape == o.shape && boolean == o.boolean;
  }
};

enum class ParamKind : std::uint8_t { gradient, non_gradient };
enum class Correlation : std::uint8_t { none, positive, negative };

struct Parameter {
  std::string name;
  ParamKind kind = ParamKind::gradient;
  /// Number of scalar elements; 1 for scalars.
  std::size_t length = 1;
  /// Declared as `[n]` (rank 1) rather than a scalar.
  bool is_vector = false;
  std::optional<std::vector<double>> init;
  Correlation correlation = Correlation::none;
  /// Candidate values for grid search; each entry has `length` elements.
  std::vector<std::vector<double>> grid;
  bool frozen = false;
  SourceSpan span;

  bool trainable() const { return kind == ParamKind::gradient && !frozen; }
  ValueShape shape() const {
    return is_vector ? ValueShape::vector(length) : ValueShape::scalar();
  }

  bool operator==(const Parameter& o) const {
    return name == o.name && kind == o.kind && length == o.length &&
           is_vector == o.is_vector && init == o.init && correlation == o.correlation &&
           grid == o.grid && frozen == o.frozen;
  }
};

struct NodeSpec {
  std::string name;
  ValueShape shape;  // filled by infer_shapes
  Expr expr;
  SourceSpan span;

  bool operator==(const NodeSpec& o) const { return name == o.name && expr == o.expr; }
};

struct PolicyGraph {
  std::string name;
  std::vector<InputSpec> inputs;
  std::vector<Parameter> parameters;
  std::vector<NodeSpec> latents;
  std::vector<NodeSpec> outputs;

  const Parameter* find_parameter(std::string_view n) const;
  const InputSpec* find_input(std::string_view n) const;

  bool operator==(const PolicyGraph&) const = default;
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

enum class DiagnosticCategory : std::uint8_t {
  cycle,
  unresolved_name,
  literal_in_expr,
  shape_mismatch,
  bad_grid,
};

std::string_view to_string(DiagnosticCategory c);

struct Diagnostic {
  std::string node;
  DiagnosticCategory category;
  std::string message;
  SourceSpan span;
};

/// Empty iff every structural invariant holds.
std::vector<Diagnostic> validate_graph(const PolicyGraph& g);

/// Throws StructuralError listing the diagnostics when validation fails.
void require_valid(const PolicyGraph& g);

/// Latent and output names such that every node follows its dependencies.
/// Ties are broken by declaration order (latents, then outputs).
std::vector<std::string> topological_order(const PolicyGraph& g);

struct ParameterCensus {
  std::size_t gradient = 0;
  std::size_t non_gradient = 0;
  std::size_t frozen = 0;

  std::size_t total() const { return gradient + non_gradient; }
  bool operator==(const ParameterCensus&) const = default;
};

ParameterCensus parameter_census(const PolicyGraph& g);

/// Fills the NodeSpec::shape fields. Requires a validated graph.
void infer_shapes(PolicyGraph& g);

// ---------------------------------------------------------------------------
// Parameters and evaluation
// ---------------------------------------------------------------------------

/// Flat storage of every parameter scalar, in declaration order.
struct ParameterVector {
  std::vector<double> values;

  bool operator==(const ParameterVector&) const = default;
};

/// Offset of each parameter inside a ParameterVector (plus the total at the end).
std::vector<std::size_t> parameter_offsets(const PolicyGraph& g);

/// Declared init values; absent inits default from the correlation sign
/// (+0.1 positive, -0.1 negative, 0.0 none).
ParameterVector init_parameters(const PolicyGraph& g);

/// Reference interpreter: walks expression trees in topological order.
/// Throws ShapeError on binding mismatches and NumericFault on non-finite values.
ValueMap evaluate(const PolicyGraph& g, const ParameterVector& theta, const ValueMap& inputs);

/// Index of the largest element; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);

}  // namespace kim
