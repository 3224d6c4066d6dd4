#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kim/llm.hpp"

namespace kim::cli {

/// Flat `[section]` + `key = value` document; keys are stored as "section.key".
struct Ini {
  std::map<std::string, std::string> values;
  std::map<std::string, int> lines;
};

/// '#' and ';' start comments. Throws ConfigError with the line number.
Ini parse_ini(std::string_view text);
Ini load_ini(const std::string& path);

/// Every key the tool understands, as "section.key".
const std::vector<std::string>& known_keys();

struct RunConfig {
  // [run]
  std::string env = "lander";
  std::uint64_t seed = 0;
  std::string out;
  // [model]
  std::string model_source = "fixture";  // fixture | dsl | mlp
  std::string model_name;                // fixture name or .kim path
  std::vector<std::size_t> hidden;
  // [data]
  std::string demos;
  std::size_t n_demos = 10;
  bool keep_all = false;
  // [train]
  std::optional<int> steps;
  std::optional<double> learning_rate;
  double validation_fraction = 0.2;
  std::optional<std::string> split;
  bool parallel_grid = true;
  // [eval]
  std::vector<std::string> checkpoints;
  bool expert = false;
  std::size_t seeds = 100;
  double noise = 0.0;
  bool sweep = false;
  std::vector<double> noise_levels;
  // [compare]
  std::string report_a, report_b;
  // [gen]
  std::string task = "lander";
  std::string mode = "replay";
  std::string fixture;
  std::string fixture_dir;
  std::string archive_dir = "archives";
  std::string knowledge;  // path to a knowledge text for task = custom
  llm::Endpoint endpoint;
  // [trace]
  std::uint64_t track_seed = 0;
  int stride = 5;
  // validate
  std::string path;
};

/// Applies a config document; unknown keys and malformed values are ConfigErrors.
void apply_ini(const Ini& ini, RunConfig& cfg);

/// 0 ok, 1 validation/statistics, 2 I/O, 3 network/auth.
int exit_code_for(const std::exception& e);

/// "*" / "**" / "***" for p below 0.05 / 0.01 / 0.001.
std::string significance_stars(double p);

int cmd_validate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_demo(const RunConfig& cfg, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_eval(const RunConfig& cfg, std::ostream& out);
int cmd_compare(const RunConfig& cfg, std::ostream& out);
int cmd_gen(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_trace(const RunConfig& cfg, std::ostream& out);

}  // namespace kim::cli
