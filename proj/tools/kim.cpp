#include <iostream>
#include <string_view>

#include <CLI11.hpp>

#include "kim/cli.hpp"
#include "kim/error.hpp"

using kim::cli::RunConfig;

namespace {

// The config file is applied before CLI11 assigns flags, so flags win.
std::string find_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string_view a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.starts_with("--config=")) return std::string(a.substr(9));
  }
  return {};
}

void common(CLI::App* sub, RunConfig& cfg, std::string& config_path) {
  sub->add_option("--config", config_path, "INI run config; command-line flags override it");
  sub->add_option("--seed", cfg.seed, "global seed");
  sub->add_option("--out", cfg.out, "output path");
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  try {
    if (const auto path = find_config(argc, argv); !path.empty()) {
      kim::cli::apply_ini(kim::cli::load_ini(path), cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kim::cli::exit_code_for(e);
  }

  CLI::App app{"Knowledge-informed policy toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  std::string keep;
  std::string mode;

  auto* validate = app.add_subcommand("validate", "parse, validate and lint a .kim file");
  validate->add_option("file", cfg.path, "model file")->required();
  common(validate, cfg, config_path);

  auto* demo = app.add_subcommand("demo", "record expert demonstrations as JSONL");
  common(demo, cfg, config_path);
  demo->add_option("--env", cfg.env, "lander or racing");
  demo->add_option("-n,--episodes", cfg.n_demos, "number of episodes");
  demo->add_option("--keep", keep, "successful (default for lander) or all")
      ->check(CLI::IsMember({"all", "successful"}));

  auto* train = app.add_subcommand("train", "fit a model to demonstrations");
  common(train, cfg, config_path);
  train->add_option("--env", cfg.env, "lander or racing");
  train->add_option("--demos", cfg.demos, "demo JSONL");
  train->add_option("--source", cfg.model_source, "fixture, dsl or mlp");
  train->add_option("--model", cfg.model_name, "fixture name or .kim path");
  train->add_option("--hidden", cfg.hidden, "MLP hidden widths")->delimiter(',');
  train->add_option("--steps", cfg.steps, "optimization steps");
  train->add_option("--lr", cfg.learning_rate, "learning rate");
  train->add_option("--validation-fraction", cfg.validation_fraction);
  train->add_option("--split", cfg.split, "by_step or by_episode");
  train->add_flag("!--serial-grid", cfg.parallel_grid, "train grid combos one at a time");

  auto* eval = app.add_subcommand("eval", "roll out policies and write reports");
  common(eval, cfg, config_path);
  eval->add_option("--env", cfg.env, "env of --expert");
  eval->add_option("--checkpoint", cfg.checkpoints, "checkpoint file (repeatable)");
  eval->add_flag("--expert", cfg.expert, "also evaluate the scripted expert");
  eval->add_option("--seeds", cfg.seeds, "evaluate seeds 0..n-1");
  eval->add_option("--noise", cfg.noise, "action noise level");
  eval->add_flag("--sweep", cfg.sweep, "noise sweep over --levels");
  eval->add_option("--levels", cfg.noise_levels, "noise levels for --sweep")->delimiter(',');

  auto* compare = app.add_subcommand("compare", "paired t-test between two eval reports");
  common(compare, cfg, config_path);
  compare->add_option("a", cfg.report_a, "eval.json of condition A");
  compare->add_option("b", cfg.report_b, "eval.json of condition B");

  auto* gen = app.add_subcommand("gen", "generate a model structure with an LLM");
  common(gen, cfg, config_path);
  gen->add_option("--task", cfg.task, "lander, racing or custom");
  gen->add_option("--mode", mode, "replay or live")->check(CLI::IsMember({"replay", "live"}));
  gen->add_option("--fixture", cfg.fixture, "recorded response id or archive hash");
  gen->add_option("--fixture-dir", cfg.fixture_dir, "directory of recorded responses");
  gen->add_option("--archive-dir", cfg.archive_dir, "where live responses are stored");
  gen->add_option("--knowledge", cfg.knowledge, "task knowledge file for --task custom");
  gen->add_option("--base-url", cfg.endpoint.base_url, "chat-completions endpoint");
  gen->add_option("--llm-model", cfg.endpoint.model, "model name sent to the endpoint");
  gen->add_option("--api-key-env", cfg.endpoint.api_key_env, "env var holding the API key");

  auto* trace = app.add_subcommand("trace", "SVG overlay of racing rollouts");
  common(trace, cfg, config_path);
  trace->add_option("--checkpoint", cfg.checkpoints, "checkpoint file (repeatable)");
  trace->add_option("--env", cfg.env, "env of --expert (racing)");
  trace->add_flag("--expert", cfg.expert, "also draw the scripted expert");
  trace->add_option("--track-seed", cfg.track_seed, "track / episode seed");
  trace->add_option("--noise", cfg.noise, "action noise level");
  trace->add_option("--stride", cfg.stride, "keep every n-th position");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (!keep.empty()) cfg.keep_all = keep == "all";
  if (!mode.empty()) cfg.mode = mode;

  try {
    if (*validate) return kim::cli::cmd_validate(cfg, std::cout, std::cerr);
    if (*demo) return kim::cli::cmd_demo(cfg, std::cout);
    if (*train) return kim::cli::cmd_train(cfg, std::cout);
    if (*eval) return kim::cli::cmd_eval(cfg, std::cout);
    if (*compare) return kim::cli::cmd_compare(cfg, std::cout);
    if (*gen) return kim::cli::cmd_gen(cfg, std::cout, std::cerr);
    if (*trace) return kim::cli::cmd_trace(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kim::cli::exit_code_for(e);
  }
  return 1;
}
