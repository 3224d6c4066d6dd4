#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "kim/cli.hpp"
#include "kim/dsl.hpp"
#include "kim/error.hpp"
#include "kim/evaluation.hpp"

using namespace kim;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name)
      : path(fs::temp_directory_path() / ("kim_cli_" + std::string(name) + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const char* f) const { return (path / f).string(); }
};

std::string slurp(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write(const std::string& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string racing_report(const std::string& id, std::vector<double> rewards) {
  EvalReport r;
  r.policy_id = id;
  r.checkpoint_hash = "h-" + id;
  r.env = EnvId::racing;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    Rollout x;
    x.seed = i;
    x.outcome.reward = rewards[i];
    r.rollouts.push_back(x);
  }
  aggregate(r);
  return reports_to_json(std::vector<EvalReport>{r});
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("ini parsing") {
  const auto ini = cli::parse_ini("# comment\n[run]\nenv = racing ; trailing\nseed=7\n\n[train]\nsteps = 12\n");
  CHECK(ini.values.at("run.env") == "racing");
  CHECK(ini.values.at("run.seed") == "7");
  CHECK(ini.lines.at("train.steps") == 7);
  CHECK_THROWS_AS(cli::parse_ini("env = lander\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_ini("[run]\nseed = 1\nseed = 2\n"), ConfigError);

  cli::RunConfig cfg;
  cli::apply_ini(ini, cfg);
  CHECK(cfg.env == "racing");
  CHECK(cfg.seed == 7);
  CHECK(cfg.steps == 12);

  cli::RunConfig other;
  CHECK_THROWS_WITH_AS(cli::apply_ini(cli::parse_ini("[train]\nstepz = 3\n"), other), doctest::Contains("stepz"),
                       ConfigError);
  CHECK_THROWS_AS(cli::apply_ini(cli::parse_ini("[run]\nseed = many\n"), other), ConfigError);
  for (const auto& k : cli::known_keys()) CHECK(k.find('.') != std::string::npos);
}

TEST_CASE("exit codes and stars") {
  CHECK(cli::exit_code_for(ConfigError("x")) == 1);
  CHECK(cli::exit_code_for(ContractViolation("x")) == 1);
  CHECK(cli::exit_code_for(IoError("x")) == 2);
  CHECK(cli::exit_code_for(NetworkError("x", true, 0)) == 3);
  CHECK(cli::significance_stars(0.2) == "");
  CHECK(cli::significance_stars(0.0742) == "");
  CHECK(cli::significance_stars(0.04) == "*");
  CHECK(cli::significance_stars(0.009) == "**");
  CHECK(cli::significance_stars(0.0001) == "***");
}

TEST_CASE("validate") {
  TempDir d("validate");
  std::ostringstream out, err;
  cli::RunConfig cfg;
  cfg.path = d / "ok.kim";
  write(cfg.path, "model m\ninput x: float\nparam w: gradient\noutput y = w * x\n");
  CHECK(cli::cmd_validate(cfg, out, err) == 0);
  CHECK(out.str().find("ok") != std::string::npos);

  cfg.path = d / "cycle.kim";
  write(cfg.path, "model c\ninput x: float\nparam w: gradient\nlatent a = w * a\noutput y = a * x\n");
  CHECK(cli::cmd_validate(cfg, out, err) == 1);
  CHECK(err.str().find("cycle") != std::string::npos);

  cfg.path = d / "missing.kim";
  CHECK_THROWS_AS(cli::cmd_validate(cfg, out, err), IoError);
}

TEST_CASE("demo, train, eval, trace") {
  TempDir d("pipeline");
  std::ostringstream out;
  cli::RunConfig cfg;
  cfg.n_demos = 2;
  cfg.out = d / "demos.jsonl";
  CHECK(cli::cmd_demo(cfg, out) == 0);
  const auto first = slurp(cfg.out);
  CHECK(cli::cmd_demo(cfg, out) == 0);
  CHECK(slurp(cfg.out) == first);
  CHECK(read_episodes(cfg.out).size() == 2);

  cfg.demos = cfg.out;
  cfg.out = d / "train";
  cfg.steps = 30;
  CHECK(cli::cmd_train(cfg, out) == 0);
  CHECK(fs::exists(d / "train/checkpoint.kimc"));
  CHECK(slurp(d / "train/train_report.json").find("\"lander\"") != std::string::npos);

  cli::RunConfig mlp = cfg;
  mlp.model_source = "mlp";
  mlp.hidden = {28};
  mlp.out = d / "mlp";
  CHECK(cli::cmd_train(mlp, out) == 0);
  CHECK(parameter_census(read_checkpoint(d / "mlp/checkpoint.kimc").graph).gradient == 368);

  cli::RunConfig missing = cfg;
  missing.demos = d / "none.jsonl";
  CHECK_THROWS_AS(cli::cmd_train(missing, out), IoError);

  cli::RunConfig ev;
  ev.checkpoints = {d / "train/checkpoint.kimc"};
  ev.seeds = 5;
  ev.out = d / "eval";
  CHECK(cli::cmd_eval(ev, out) == 0);
  const auto json1 = slurp(d / "eval/eval.json");
  CHECK(cli::cmd_eval(ev, out) == 0);
  CHECK(slurp(d / "eval/eval.json") == json1);
  CHECK(reports_from_json(json1).at(0).rollouts.size() == 5);

  cli::RunConfig sweep;
  sweep.env = "racing";
  sweep.expert = true;
  sweep.seeds = 2;
  sweep.sweep = true;
  sweep.noise_levels = {0.0, 0.1};
  sweep.out = d / "sweep";
  CHECK(cli::cmd_eval(sweep, out) == 0);
  const auto csv = slurp(d / "sweep/eval.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  cli::RunConfig tr;
  tr.env = "racing";
  tr.expert = true;
  tr.track_seed = 2;
  tr.out = d / "t.svg";
  CHECK(cli::cmd_trace(tr, out) == 0);
  const auto svg = slurp(tr.out);
  CHECK(cli::cmd_trace(tr, out) == 0);
  CHECK(slurp(tr.out) == svg);

  cli::RunConfig lt;
  lt.expert = true;
  CHECK_THROWS_WITH_AS(cli::cmd_trace(lt, out), doctest::Contains("racing only"), ContractViolation);
}

TEST_CASE("compare") {
  TempDir d("compare");
  std::ostringstream out;
  write(d / "a.json", racing_report("a", {1, 2, 3}));
  write(d / "b.json", racing_report("b", {0, 0, 0}));
  cli::RunConfig cfg;
  cfg.report_a = d / "a.json";
  cfg.report_b = d / "b.json";
  cfg.out = d / "cmp.json";
  CHECK(cli::cmd_compare(cfg, out) == 0);
  const auto j = slurp(cfg.out);
  CHECK(j.find("\"stars\": \"\"") != std::string::npos);
  CHECK(out.str().find("p = 0.074") != std::string::npos);

  cfg.report_b = d / "a.json";
  std::ostringstream same;
  CHECK(cli::cmd_compare(cfg, same) == 0);
  CHECK(same.str().find('*') == std::string::npos);

  write(d / "c.json", racing_report("c", {1, 2}));
  cfg.report_b = d / "c.json";
  CHECK_THROWS_AS(cli::cmd_compare(cfg, out), ContractViolation);
}

TEST_CASE("gen") {
  TempDir d("gen");
  std::ostringstream out, err;
  cli::RunConfig cfg;
  cfg.out = d / "lander.kim";
  CHECK(cli::cmd_gen(cfg, out, err) == 0);
  CHECK(fs::exists(d / "lander.kim.gen.json"));
  CHECK(dsl::parse(slurp(cfg.out)) == dsl::load_fixture("lander_kim"));

  write(d / "bad_v1.txt", "[Code]\n```kim\nmodel b\ninput x: float\noutput y = q * x\n```\n");
  cli::RunConfig bad = cfg;
  bad.fixture = "bad_v1";
  bad.fixture_dir = d.path.string();
  bad.out = d / "bad.kim";
  CHECK(cli::cmd_gen(bad, out, err) == 1);
  CHECK_FALSE(fs::exists(d / "bad.kim"));

  cli::RunConfig live = cfg;
  live.mode = "live";
  live.endpoint.api_key_env = "KIM_TEST_UNSET_KEY";
  live.archive_dir = d / "arch";
  try {
    cli::cmd_gen(live, out, err);
    FAIL("expected NetworkError");
  } catch (const std::exception& e) {
    CHECK(cli::exit_code_for(e) == 3);
  }
}

}  // TEST_SUITE
