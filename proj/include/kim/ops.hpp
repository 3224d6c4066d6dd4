#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "kim/graph.hpp"
#include "kim/value.hpp"

namespace kim::ops {

/// One op application over already-evaluated arguments.
///
/// lin_combine lays its arguments out as `terms..., weights..., [bias]`. The
/// weights are either one scalar per term or a single vector parameter; a
/// vector weight applied to a single vector term is a dot product.
struct OpCall {
  OpKind op = OpKind::add;
  std::span<const Value* const> args;
  std::size_t n_terms = 0;
  bool vector_weights = false;
  bool has_bias = false;
  std::size_t index = 0;  // col
};

/// Evaluates `call` into `out`, reusing out's storage. Throws ShapeError.
void forward(const OpCall& call, Value& out);

/// Accumulates the vector-Jacobian product into `arg_adjoints` (entries may be
/// null for arguments that need no gradient).
void backward(const OpCall& call, const Value& out, const Value& out_adjoint,
              std::span<Value* const> arg_adjoints);

/// Distance to the nearest non-differentiable point of the op at this
/// evaluation, and a hash of the discrete branch decisions it made.
struct KinkInfo {
  double margin = 0.0;
  std::uint64_t signature = 0;
};
KinkInfo inspect_kinks(const OpCall& call, const Value& out);

/// True when a lin_combine with these arguments reduces a vector term to a scalar.
bool lin_combine_is_dot(const OpCall& call);

/// Human-readable forward and vector-Jacobian rules for one op.
struct KernelRule {
  OpKind op;
  std::string forward;
  std::string vjp;
};
std::span<const KernelRule> kernel_rules();

}  // namespace kim::ops
