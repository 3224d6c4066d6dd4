#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kim/graph.hpp"
#include "kim/ops.hpp"

namespace kim {

/// A PolicyGraph lowered to a flat list of primitive applications over value
/// slots. Immutable once built; share one Program across threads and give
/// each thread its own Tape.
class Program {
 public:
  explicit Program(const PolicyGraph& g);

  struct Instr {
    OpKind op;
    std::vector<std::size_t> args;
    std::size_t out;
    std::size_t n_terms = 0;
    bool vector_weights = false;
    bool has_bias = false;
    std::size_t index = 0;
    std::size_t node;         // owning node, for diagnostics
    bool needs_grad = false;  // result depends on a trainable parameter
    bool arg_dependent = false;
  };

  const PolicyGraph& graph() const { return graph_; }
  std::size_t slot_count() const { return n_slots_; }
  std::size_t input_count() const { return graph_.inputs.size(); }
  std::size_t output_count() const { return graph_.outputs.size(); }
  std::span<const Instr> instructions() const { return instrs_; }
  std::size_t parameter_count() const { return offsets_.back(); }
  std::size_t trainable_count() const { return trainable_.size(); }
  /// ParameterVector positions of the trainable scalars (GradientVector order).
  std::span<const std::size_t> trainable_positions() const { return trainable_; }

 private:
  friend class Tape;

  PolicyGraph graph_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> trainable_;
  std::vector<std::string> node_names_;
  std::size_t param_base_ = 0;
  std::size_t const_base_ = 0;
  std::vector<Value> constants_;
  std::vector<Instr> instrs_;
  std::vector<std::size_t> output_slots_;
  std::vector<bool> slot_needs_grad_;
  std::size_t n_slots_ = 0;
};

/// Forward values and adjoints recorded for one evaluation of a Program.
/// Reusable across samples; not thread-safe.
class Tape {
 public:
  explicit Tape(const Program& p, bool track_kinks = false);

  /// Copies parameter values into the tape. Call again whenever theta changes.
  void bind_parameters(const ParameterVector& theta);

  /// Runs the forward pass; `inputs` follows the graph's input declaration
  /// order and must outlive the following backward call.
  void forward(std::span<const Value> inputs);

  const Value& output(std::size_t i) const;

  /// Reverse pass. `seeds[i]` is the adjoint of output i. Trainable-parameter
  /// gradients are added into `grad`, indexed like the ParameterVector.
  void backward(std::span<const Value> seeds, std::span<double> grad);
  /// Same, with flat seeds per output (scalar outputs take one element).
  void backward(std::span<const std::span<const double>> seeds, std::span<double> grad);

  /// Valid after a forward pass with kink tracking enabled.
  double kink_margin() const { return kink_margin_; }
  std::uint64_t branch_signature() const { return signature_; }

 private:
  void check_inputs(std::span<const Value> inputs) const;
  void run_backward(std::span<double> grad);

  const Program& program_;
  bool track_kinks_;
  std::vector<Value> values_;
  std::vector<const Value*> slot_;
  std::vector<Value> adjoints_;
  std::vector<const Value*> arg_buf_;
  std::vector<Value*> adj_buf_;
  double kink_margin_ = 0.0;
  std::uint64_t signature_ = 0;
};

/// Gradients of the trainable scalars only (non-gradient and frozen entries
/// are absent), in ParameterVector order.
struct GradientVector {
  std::vector<double> values;
};

struct ForwardBackwardResult {
  ValueMap outputs;
  GradientVector gradient;
};

ForwardBackwardResult forward_backward(const PolicyGraph& g, const ParameterVector& theta,
                                       const ValueMap& inputs, const ValueMap& adjoint_seed);

/// Raised when a finite-difference probe straddles a kink.
class NonSmoothPoint : public Error {
 public:
  using Error::Error;
};

/// Max over trainable scalars of |analytic - central difference| / max(1, |numeric|)
/// for the scalar objective sum(seed * outputs).
double finite_difference_check(const PolicyGraph& g, const ParameterVector& theta,
                               const ValueMap& inputs, const ValueMap& seed, double eps);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

enum class LossKind { cross_entropy_balanced, mse };

/// Per-sample supervision: a class label (cross entropy) or a target vector (mse).
struct SampleTarget {
  int label = -1;
  std::vector<double> values;
};

/// w_c = n_total / (n_classes * n_c). Throws ContractViolation naming any empty class.
std::vector<double> balanced_class_weights(std::span<const SampleTarget> targets,
                                           std::size_t n_classes);

/// Unscaled loss of one sample; writes d(loss)/d(prediction) into `grad`.
/// Cross entropy returns w_c * -log softmax(pred)[c]; mse returns mean_d (p - t)^2.
double sample_loss(LossKind kind, std::span<const double> pred, const SampleTarget& target,
                   std::span<const double> class_weights, std::span<double> grad);

struct LossResult {
  double loss = 0.0;
  std::vector<std::vector<double>> grad;  // per sample, d(mean loss)/d(prediction)
};

/// Mean loss over the batch with exact gradients. Cross entropy derives
/// balanced weights from the batch when `class_weights` is empty.
LossResult compute_loss(LossKind kind, std::span<const std::vector<double>> predictions,
                        std::span<const SampleTarget> targets,
                        std::span<const double> class_weights = {});

/// Documented forward / vector-Jacobian rule for every OpKind.
std::span<const ops::KernelRule> kernel_vjp_table();

}  // namespace kim
