#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kim/autodiff.hpp"
#include "kim/envs.hpp"
#include "kim/graph.hpp"

namespace kim {

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

enum class SplitMode : std::uint8_t { by_step, by_episode };

struct TransitionRef {
  std::size_t episode = 0;
  std::size_t step = 0;
  bool operator==(const TransitionRef&) const = default;
  auto operator<=>(const TransitionRef&) const = default;
};

/// Membership of each split, in source order.
struct Split {
  std::vector<TransitionRef> train;
  std::vector<TransitionRef> validation;
};

/// `fraction` is the validation share. by_step samples transitions without
/// replacement; by_episode samples whole episodes.
Split split_dataset(std::span<const Episode> episodes, SplitMode mode, double fraction,
                    std::uint64_t seed);

/// Per-feature affine maps followed by a clamp to [-1, 1]. The racing map
/// acts per tile column and per indicator; the lander map is the identity.
struct Normalizer {
  EnvId env = EnvId::lander;
  bool identity = true;
  std::vector<double> tile_scale, tile_offset;            // 8 entries
  std::vector<double> indicator_scale, indicator_offset;  // 7 entries
};

Normalizer fit_normalizer(EnvId env, const RacingConfig& cfg = {});
Observation apply_normalizer(const Normalizer& n, const Observation& obs);

/// Maps an observation onto a graph's declared inputs (declaration order).
/// Supported layouts: lander as 8 scalars or one [8] vector; racing as a
/// ([L, 8], [7]) pair or one flat [7 + 8k] vector holding the indicators and
/// the first k tiles.
std::vector<Value> graph_inputs(const PolicyGraph& g, EnvId env, const Observation& obs);

struct Sample {
  std::vector<Value> inputs;
  SampleTarget target;
};

/// Normalized samples for the referenced transitions.
std::vector<Sample> make_samples(const PolicyGraph& g, EnvId env, std::span<const Episode> episodes,
                                 std::span<const TransitionRef> refs, const Normalizer& norm);

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
};

/// One bias-corrected Adam update of the entries where `mask` is true (all
/// entries when the mask is empty). Throws NumericFault on a non-finite gradient.
void adam_step(AdamState& state, std::vector<double>& theta, std::span<const double> grad,
               const std::vector<bool>& mask, double lr, const AdamConfig& cfg = {});

struct BatchResult {
  double loss = 0.0;
  std::vector<double> grad;  // ParameterVector-indexed; empty when not requested
};

/// Mean loss over the batch and its gradient. Samples are processed in
/// fixed blocks across OpenMP threads and the block partials are summed in
/// block order, so the result does not depend on the thread count.
BatchResult batch_loss(const Program& p, const ParameterVector& theta, std::span<const Sample> batch,
                       LossKind kind, std::span<const double> class_weights, bool want_grad);

/// Single-threaded per-sample accumulation; the reference for batch_loss.
BatchResult batch_loss_serial(const Program& p, const ParameterVector& theta,
                              std::span<const Sample> batch, LossKind kind,
                              std::span<const double> class_weights, bool want_grad);

struct TrainConfig {
  int steps = 100;
  double learning_rate = 0.03;
  LossKind loss = LossKind::mse;
  SplitMode split = SplitMode::by_step;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
  AdamConfig adam;
  /// Run grid combos concurrently.
  bool parallel_grid = true;
};

struct ComboResult {
  std::map<std::string, std::vector<double>> values;  // non-gradient parameter -> value
  double best_loss = 0.0;
  int best_step = 0;
};

struct TrainedModel {
  PolicyGraph graph;
  ParameterVector theta;
  std::map<std::string, std::vector<double>> combo;
  std::vector<double> train_curve;
  std::vector<double> validation_curve;  // empty without a validation split
  int best_step = 0;
  double best_loss = 0.0;  // validation loss when available, else train loss
  std::vector<ComboResult> combos;
};

/// Full-batch Adam. Entry t of each curve is the loss at the parameters
/// before update t; the returned parameters are those with the lowest
/// validation loss (train loss when `validation` is empty).
TrainedModel train_gradient(const PolicyGraph& g, const ParameterVector& theta0,
                            std::span<const Sample> train, std::span<const Sample> validation,
                            const TrainConfig& cfg, std::span<const double> class_weights = {});

/// Cartesian product of the non-gradient grids (first parameter varies
/// slowest), one train_gradient run per combo from init_parameters. Ties go
/// to the earlier combo.
TrainedModel grid_search_train(const PolicyGraph& g, std::span<const Sample> train,
                               std::span<const Sample> validation, const TrainConfig& cfg,
                               std::span<const double> class_weights = {});

/// All combos in product order.
std::vector<std::map<std::string, std::vector<double>>> grid_combos(const PolicyGraph& g);

/// Copy of theta with the combo's values written in.
ParameterVector apply_combo(const PolicyGraph& g, ParameterVector theta,
                            const std::map<std::string, std::vector<double>>& combo);

/// Dense tanh network over one vector input `obs`; weights and biases drawn
/// from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
PolicyGraph build_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                      std::size_t output_dim, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct ModelSource {
  enum class Kind : std::uint8_t { fixture, dsl_file, mlp } kind = Kind::fixture;
  std::string name;                 // fixture name or file path
  std::vector<std::size_t> hidden;  // mlp only
};

struct PipelineResult {
  TrainedModel model;
  Normalizer normalizer;
  EnvId env = EnvId::lander;
  std::size_t n_train = 0, n_validation = 0;
  double wall_seconds = 0.0;
};

/// Racing MLPs see this many tiles (ahead of the nearest one) plus the indicators.
constexpr std::size_t kMlpRacingTiles = 30;

PolicyGraph resolve_model(const ModelSource& src, EnvId env, std::uint64_t seed);

PipelineResult train_pipeline(const ModelSource& src, EnvId env, std::span<const Episode> episodes,
                              const TrainConfig& cfg);

/// Deterministic report (everything except wall time).
std::string training_report_json(const PipelineResult& r);

/// Canonical DSL text followed by a `params` block of name = value lines.
std::string checkpoint_text(const PolicyGraph& g, const ParameterVector& theta, EnvId env);

struct Checkpoint {
  PolicyGraph graph;
  ParameterVector theta;
  EnvId env = EnvId::lander;
};

Checkpoint parse_checkpoint(std::string_view text);
void write_checkpoint(const std::string& path, const PipelineResult& r);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace kim
