#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kim/envs.hpp"
#include "kim/training.hpp"

namespace kim {

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// Stateful per-thread evaluator. Lander policies return 4 logits, racing
/// policies return (steer, gas, brake) before clipping.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::vector<double> act(const Observation& obs) = 0;
};

struct PolicySpec {
  std::string id;
  std::string checkpoint_hash;  // "expert" for the scripted experts
  EnvId env = EnvId::lander;
  std::function<std::unique_ptr<Policy>()> make;
};

PolicySpec expert_policy(EnvId env, const EnvConfig& cfg = {});
PolicySpec graph_policy(std::string id, const PolicyGraph& g, const ParameterVector& theta,
                        const Normalizer& norm, EnvId env);
PolicySpec checkpoint_policy(std::string id, const Checkpoint& c);

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

struct RolloutOptions {
  bool record_path = false;         // racing car positions, one per step
  bool record_transitions = false;  // observations and actions
};

struct Rollout {
  std::uint64_t seed = 0;
  Outcome outcome;
  bool aborted = false;  // the policy produced a non-finite output
  std::string fault;
  std::vector<std::array<double, 2>> path;
  Episode episode;
};

/// Lander: argmax over logits until terminal. Racing: clip, corrupt with
/// Gaussian action noise when noise_level > 0, run until every tile is
/// visited or the step cap, and score with racing_score. The noise stream is
/// derived from the seed.
Rollout rollout(const PolicySpec& policy, std::uint64_t seed, double noise_level,
                const EnvConfig& cfg = {}, const RolloutOptions& opt = {});

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double df);
/// Inverse of student_t_cdf for p in (0, 1).
double student_t_quantile(double p, double df);

struct ConfidenceInterval {
  double level = 0.95;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double multiplier = 0.0;  // t critical value
};

/// mean ± t_{(1+level)/2, n-1} s / sqrt(n). Throws ContractViolation for n < 2.
ConfidenceInterval confidence_interval(std::span<const double> samples, double level = 0.95);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1 denominator); 0 for n < 2.
double sample_std(std::span<const double> v);

struct PairedComparison {
  std::string condition_a, condition_b;
  std::vector<std::uint64_t> keys;
  std::vector<double> a, b;
  double mean_diff = 0.0;
  double sd_diff = 0.0;
  double t = 0.0;
  int df = 0;
  double p = 1.0;  // two-sided
  bool degenerate_variance = false;
};

/// Paired Student t-test on d = a - b. Keys pair the samples and must match.
PairedComparison paired_t_test(std::span<const double> a, std::span<const double> b,
                               std::span<const std::uint64_t> keys_a,
                               std::span<const std::uint64_t> keys_b,
                               std::string condition_a = "a", std::string condition_b = "b");

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalReport {
  std::string policy_id;
  std::string checkpoint_hash;
  EnvId env = EnvId::lander;
  double noise_level = 0.0;
  std::vector<Rollout> rollouts;  // paths and episodes are not exported
  // aggregates
  double success_rate = 0.0;  // lander
  double mean_reward = 0.0;   // racing
  double std_reward = 0.0;
  double mean_coverage = 0.0;
  double mean_max_coverage = 0.0;
  std::size_t aborted = 0;
  /// CI of the per-seed metric (success indicator or reward); empty for n < 2.
  std::optional<ConfidenceInterval> ci;
  /// reward(level) / reward(0) inside a noise sweep.
  std::optional<double> retention;
};

/// Per-seed metric: 1/0 success for the lander, reward for racing.
std::vector<double> per_seed_metric(const EvalReport& r);
/// Fills the aggregate fields from the rollouts.
void aggregate(EvalReport& r);

/// Rollouts on seeds 0..n_seeds-1 across OpenMP threads; the reduction is in
/// seed order.
EvalReport evaluate_policy(const PolicySpec& policy, std::size_t n_seeds, double noise_level,
                           const EnvConfig& cfg = {}, const RolloutOptions& opt = {});
/// Single-threaded reference for evaluate_policy.
EvalReport evaluate_policy_serial(const PolicySpec& policy, std::size_t n_seeds,
                                  double noise_level, const EnvConfig& cfg = {});

struct DemoSet {
  std::uint64_t key = 0;               // pairing key: the set's sampling seed
  std::vector<std::size_t> indices;    // into the pool
};

/// k subsets of n episodes each, drawn without replacement from the pool.
std::vector<DemoSet> sample_demo_sets(std::size_t pool_size, std::size_t k_sets,
                                      std::size_t n_per_set, std::uint64_t seed);

struct ResampleResult {
  DemoSet set;
  EvalReport report;
};

using Trainer = std::function<PolicySpec(std::span<const Episode> demos, const DemoSet& set)>;

ResampleResult resample_one(const Trainer& train, std::span<const Episode> pool, const DemoSet& set,
                            std::size_t n_eval_seeds, const EnvConfig& cfg);
std::vector<ResampleResult> resample_experiment(const Trainer& train,
                                                std::span<const Episode> pool,
                                                std::span<const DemoSet> sets,
                                                std::size_t n_eval_seeds, const EnvConfig& cfg = {});

inline const std::vector<double> kDefaultNoiseLevels{0.0, 0.05, 0.1, 0.15, 0.2};

/// One report per (policy, level) in policy-major order, with retention
/// relative to the policy's level-0 mean reward (level 0 must be present).
std::vector<EvalReport> noise_sweep(std::span<const PolicySpec> policies,
                                    std::span<const double> levels, std::size_t n_seeds,
                                    const EnvConfig& cfg = {});

// Export. CSV columns are kReportCsvHeader; JSON carries schema "kim-eval/1".
extern const char* const kReportCsvHeader;
std::string reports_to_csv(std::span<const EvalReport> reports);
std::string reports_to_json(std::span<const EvalReport> reports);
std::vector<EvalReport> reports_from_json(std::string_view text);
void export_report(std::span<const EvalReport> reports, const std::string& path,
                   const std::string& format);

struct TraceGroup {
  std::string label;
  std::string color;
  std::string checkpoint_hash;
  std::vector<std::vector<std::array<double, 2>>> paths;
};

/// Track borders plus one polyline per path, sampled every `stride` steps.
std::string trace_svg(const Track& track, std::span<const TraceGroup> groups, int stride = 5);
void export_trace_svg(const Track& track, std::span<const TraceGroup> groups,
                      const std::string& path, int stride = 5);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

}  // namespace kim
