#include <algorithm>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "kim/cli.hpp"
#include "kim/dsl.hpp"
#include "kim/error.hpp"
#include "kim/evaluation.hpp"
#include "kim/training.hpp"

namespace kim::cli {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) throw IoError("cannot create directory '" + parent.string() + "': " + ec.message());
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw IoError("failed writing '" + path + "'");
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is required");
  if (!fs::is_regular_file(path)) throw IoError(what + " '" + path + "' does not exist");
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto end = s.find(',', pos);
    if (end == std::string_view::npos) end = s.size();
    auto item = trim(s.substr(pos, end - pos));
    if (!item.empty()) out.push_back(std::move(item));
    pos = end + 1;
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a valid number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

/// Holds `<dir>/.kim.lock` for the lifetime of a command.
class DirLock {
 public:
  explicit DirLock(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
    path_ = (fs::path(dir) / ".kim.lock").string();
    if (fs::exists(path_)) {
      throw IoError("output directory '" + dir + "' is locked by another run (" + path_ + ")");
    }
    std::ofstream f(path_);
    if (!f) throw IoError("cannot create lock file '" + path_ + "'");
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
};

void write_meta(const std::string& path, const std::string& command, double seconds) {
  json j{{"command", command}, {"wall_seconds", seconds}};
  write_file(path, j.dump(2) + "\n");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string out_or(const RunConfig& cfg, const std::string& fallback) {
  return cfg.out.empty() ? fallback : cfg.out;
}

}  // namespace

Ini parse_ini(std::string_view text) {
  Ini ini;
  std::string section;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (const auto c = line.find_first_of("#;"); c != std::string::npos) line.erase(c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": bad section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    if (section.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": key outside a section");
    }
    const std::string key = section + "." + trim(std::string_view(line).substr(0, eq));
    if (ini.values.count(key)) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    ini.values[key] = trim(std::string_view(line).substr(eq + 1));
    ini.lines[key] = line_no;
  }
  return ini;
}

Ini load_ini(const std::string& path) { return parse_ini(read_file(path)); }

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys{
      "run.env",           "run.seed",          "run.out",
      "model.source",      "model.name",        "model.hidden",
      "data.demos",        "data.n",            "data.keep",
      "train.steps",       "train.learning_rate", "train.validation_fraction",
      "train.split",       "train.parallel_grid",
      "eval.checkpoints",  "eval.expert",       "eval.seeds",
      "eval.noise",        "eval.sweep",        "eval.noise_levels",
      "compare.a",         "compare.b",
      "gen.task",          "gen.mode",          "gen.fixture",
      "gen.fixture_dir",   "gen.archive_dir",   "gen.knowledge",
      "gen.base_url",      "gen.model",         "gen.api_key_env",
      "gen.max_attempts",  "gen.timeout",
      "trace.track_seed",  "trace.stride",
  };
  return keys;
}

void apply_ini(const Ini& ini, RunConfig& cfg) {
  const auto& known = known_keys();
  for (const auto& [key, _] : ini.values) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("config line " + std::to_string(ini.lines.at(key)) + ": unknown key '" + key + "'");
    }
  }
  auto get = [&](const char* key) -> const std::string* {
    auto it = ini.values.find(key);
    return it == ini.values.end() ? nullptr : &it->second;
  };
  if (auto v = get("run.env")) cfg.env = *v;
  if (auto v = get("run.seed")) cfg.seed = parse_number<std::uint64_t>("run.seed", *v);
  if (auto v = get("run.out")) cfg.out = *v;
  if (auto v = get("model.source")) cfg.model_source = *v;
  if (auto v = get("model.name")) cfg.model_name = *v;
  if (auto v = get("model.hidden")) {
    cfg.hidden.clear();
    for (const auto& h : split_list(*v)) cfg.hidden.push_back(parse_number<std::size_t>("model.hidden", h));
  }
  if (auto v = get("data.demos")) cfg.demos = *v;
  if (auto v = get("data.n")) cfg.n_demos = parse_number<std::size_t>("data.n", *v);
  if (auto v = get("data.keep")) {
    if (*v != "all" && *v != "successful") throw ConfigError("data.keep must be all or successful");
    cfg.keep_all = *v == "all";
  }
  if (auto v = get("train.steps")) cfg.steps = parse_number<int>("train.steps", *v);
  if (auto v = get("train.learning_rate")) cfg.learning_rate = parse_number<double>("train.learning_rate", *v);
  if (auto v = get("train.validation_fraction")) {
    cfg.validation_fraction = parse_number<double>("train.validation_fraction", *v);
  }
  if (auto v = get("train.split")) cfg.split = *v;
  if (auto v = get("train.parallel_grid")) cfg.parallel_grid = parse_bool("train.parallel_grid", *v);
  if (auto v = get("eval.checkpoints")) cfg.checkpoints = split_list(*v);
  if (auto v = get("eval.expert")) cfg.expert = parse_bool("eval.expert", *v);
  if (auto v = get("eval.seeds")) cfg.seeds = parse_number<std::size_t>("eval.seeds", *v);
  if (auto v = get("eval.noise")) cfg.noise = parse_number<double>("eval.noise", *v);
  if (auto v = get("eval.sweep")) cfg.sweep = parse_bool("eval.sweep", *v);
  if (auto v = get("eval.noise_levels")) {
    cfg.noise_levels.clear();
    for (const auto& x : split_list(*v)) cfg.noise_levels.push_back(parse_number<double>("eval.noise_levels", x));
  }
  if (auto v = get("compare.a")) cfg.report_a = *v;
  if (auto v = get("compare.b")) cfg.report_b = *v;
  if (auto v = get("gen.task")) cfg.task = *v;
  if (auto v = get("gen.mode")) cfg.mode = *v;
  if (auto v = get("gen.fixture")) cfg.fixture = *v;
  if (auto v = get("gen.fixture_dir")) cfg.fixture_dir = *v;
  if (auto v = get("gen.archive_dir")) cfg.archive_dir = *v;
  if (auto v = get("gen.knowledge")) cfg.knowledge = *v;
  if (auto v = get("gen.base_url")) cfg.endpoint.base_url = *v;
  if (auto v = get("gen.model")) cfg.endpoint.model = *v;
  if (auto v = get("gen.api_key_env")) cfg.endpoint.api_key_env = *v;
  if (auto v = get("gen.max_attempts")) cfg.endpoint.max_attempts = parse_number<int>("gen.max_attempts", *v);
  if (auto v = get("gen.timeout")) cfg.endpoint.timeout_seconds = parse_number<double>("gen.timeout", *v);
  if (auto v = get("trace.track_seed")) cfg.track_seed = parse_number<std::uint64_t>("trace.track_seed", *v);
  if (auto v = get("trace.stride")) cfg.stride = parse_number<int>("trace.stride", *v);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NetworkError*>(&e)) return 3;
  if (dynamic_cast<const IoError*>(&e)) return 2;
  return 1;
}

std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_validate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const std::string text = read_file(cfg.path);
  PolicyGraph g;
  try {
    g = dsl::parse(text);
  } catch (const dsl::ParseError& e) {
    err << cfg.path << ":" << e.what() << "\n";
    return 1;
  } catch (const dsl::ValidationError& e) {
    for (const auto& d : e.diagnostics()) err << cfg.path << ":" << dsl::format_diagnostic(d) << "\n";
    return 1;
  }
  for (const auto& w : dsl::lint(g)) err << cfg.path << ": warning: " << w.subject << ": " << w.message << "\n";
  const auto c = parameter_census(g);
  out << cfg.path << ": ok (" << c.gradient << " gradient, " << c.non_gradient << " non-gradient, "
      << c.frozen << " frozen)\n";
  return 0;
}

int cmd_demo(const RunConfig& cfg, std::ostream& out) {
  const EnvId env = env_from_string(cfg.env);
  const auto t0 = std::chrono::steady_clock::now();
  const auto episodes = collect_demos(env, cfg.n_demos,
                                      cfg.keep_all ? DemoFilter::keep_all : DemoFilter::keep_successful,
                                      derive_seed(cfg.seed, "demo"));
  const std::string path = out_or(cfg, "demos.jsonl");
  write_file(path, episodes_to_jsonl(episodes));
  write_meta(path + ".meta.json", "demo", seconds_since(t0));
  out << "wrote " << episodes.size() << " " << cfg.env << " episodes to " << path << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const EnvId env = env_from_string(cfg.env);
  ModelSource src;
  if (cfg.model_source == "fixture") {
    src.kind = ModelSource::Kind::fixture;
    src.name = cfg.model_name.empty() ? std::string(to_string(env)) + "_kim" : cfg.model_name;
  } else if (cfg.model_source == "dsl") {
    src.kind = ModelSource::Kind::dsl_file;
    src.name = cfg.model_name;
    require_file(src.name, "model file");
  } else if (cfg.model_source == "mlp") {
    src.kind = ModelSource::Kind::mlp;
    src.hidden = cfg.hidden;
    if (src.hidden.empty()) src.hidden = env == EnvId::lander ? std::vector<std::size_t>{1} : std::vector<std::size_t>{10};
  } else {
    throw ConfigError("model source must be fixture, dsl or mlp, not '" + cfg.model_source + "'");
  }
  require_file(cfg.demos, "demo file");
  const auto episodes = read_episodes(cfg.demos);

  // Defaults follow the per-model step/learning-rate table.
  const bool mlp = src.kind == ModelSource::Kind::mlp;
  TrainConfig tc;
  if (env == EnvId::lander) {
    tc.steps = mlp ? 10000 : 4000;
    tc.learning_rate = mlp ? 0.001 : 0.03;
    tc.split = SplitMode::by_step;
  } else {
    tc.steps = mlp ? 250 : 200;
    tc.learning_rate = mlp ? 0.003 : 0.03;
    tc.split = SplitMode::by_episode;
  }
  if (cfg.steps) tc.steps = *cfg.steps;
  if (cfg.learning_rate) tc.learning_rate = *cfg.learning_rate;
  if (cfg.split) {
    if (*cfg.split == "by_step") {
      tc.split = SplitMode::by_step;
    } else if (*cfg.split == "by_episode") {
      tc.split = SplitMode::by_episode;
    } else {
      throw ConfigError("split must be by_step or by_episode");
    }
  }
  tc.validation_fraction = cfg.validation_fraction;
  tc.parallel_grid = cfg.parallel_grid;
  tc.seed = cfg.seed;

  const std::string dir = out_or(cfg, "out");
  DirLock lock(dir);
  const auto result = train_pipeline(src, env, episodes, tc);
  write_checkpoint((fs::path(dir) / "checkpoint.kimc").string(), result);
  write_file((fs::path(dir) / "train_report.json").string(), training_report_json(result));
  write_meta((fs::path(dir) / "train_report.meta.json").string(), "train", result.wall_seconds);
  const auto c = parameter_census(result.model.graph);
  out << "trained " << result.model.graph.name << " (" << c.total() << " parameters) on "
      << result.n_train << " samples; best loss " << result.model.best_loss << " at step "
      << result.model.best_step << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  std::vector<PolicySpec> policies;
  if (cfg.expert) policies.push_back(expert_policy(env_from_string(cfg.env)));
  for (const auto& path : cfg.checkpoints) {
    require_file(path, "checkpoint");
    policies.push_back(checkpoint_policy(path, read_checkpoint(path)));
  }
  if (policies.empty()) throw ConfigError("eval needs --checkpoint or --expert");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<EvalReport> reports;
  if (cfg.sweep) {
    const auto& levels = cfg.noise_levels.empty() ? kDefaultNoiseLevels : cfg.noise_levels;
    reports = noise_sweep(policies, levels, cfg.seeds);
  } else {
    for (const auto& p : policies) reports.push_back(evaluate_policy(p, cfg.seeds, cfg.noise));
  }
  const std::string dir = out_or(cfg, "out");
  DirLock lock(dir);
  export_report(reports, (fs::path(dir) / "eval.json").string(), "json");
  export_report(reports, (fs::path(dir) / "eval.csv").string(), "csv");
  write_meta((fs::path(dir) / "eval.meta.json").string(), "eval", seconds_since(t0));
  for (const auto& r : reports) {
    out << r.policy_id << " noise " << r.noise_level << ": ";
    if (r.env == EnvId::lander) {
      out << "success " << r.success_rate;
    } else {
      out << "reward " << r.mean_reward << " coverage " << r.mean_coverage;
      if (r.retention) out << " retention " << *r.retention;
    }
    out << " over " << r.rollouts.size() << " seeds\n";
  }
  return 0;
}

int cmd_compare(const RunConfig& cfg, std::ostream& out) {
  require_file(cfg.report_a, "report A");
  require_file(cfg.report_b, "report B");
  const auto a = reports_from_json(read_file(cfg.report_a));
  const auto b = reports_from_json(read_file(cfg.report_b));
  if (a.size() != 1 || b.size() != 1) {
    throw ContractViolation("compare needs one report per file (got " + std::to_string(a.size()) +
                            " and " + std::to_string(b.size()) + ")");
  }
  if (a[0].env != b[0].env) throw ContractViolation("reports come from different environments");
  auto keys = [](const EvalReport& r) {
    std::vector<std::uint64_t> k;
    for (const auto& x : r.rollouts) k.push_back(x.seed);
    return k;
  };
  const auto ma = per_seed_metric(a[0]), mb = per_seed_metric(b[0]);
  const auto ka = keys(a[0]), kb = keys(b[0]);
  const auto cmp = paired_t_test(ma, mb, ka, kb, a[0].policy_id, b[0].policy_id);
  const std::string stars = significance_stars(cmp.p);
  json j{{"schema", "kim-compare/1"},
         {"condition_a", cmp.condition_a},
         {"condition_b", cmp.condition_b},
         {"checkpoint_a", a[0].checkpoint_hash},
         {"checkpoint_b", b[0].checkpoint_hash},
         {"keys", cmp.keys},
         {"a", cmp.a},
         {"b", cmp.b},
         {"mean_diff", cmp.mean_diff},
         {"sd_diff", cmp.sd_diff},
         {"t", std::isfinite(cmp.t) ? json(cmp.t) : json(cmp.t > 0 ? "inf" : "-inf")},
         {"df", cmp.df},
         {"p", cmp.p},
         {"stars", stars},
         {"degenerate_variance", cmp.degenerate_variance}};
  if (!cfg.out.empty()) write_file(cfg.out, j.dump(2) + "\n");
  out << cmp.condition_a << " - " << cmp.condition_b << ": mean diff " << cmp.mean_diff << ", t("
      << cmp.df << ") = " << cmp.t << ", p = " << cmp.p << (stars.empty() ? "" : " " + stars)
      << (cmp.degenerate_variance ? " (degenerate variance)" : "") << "\n";
  return 0;
}

int cmd_gen(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  std::string knowledge;
  if (cfg.task == "custom") {
    require_file(cfg.knowledge, "knowledge file");
    knowledge = read_file(cfg.knowledge);
  }
  const auto bundle = llm::build_prompts(cfg.task, knowledge);
  llm::Session s;
  s.endpoint = cfg.endpoint;
  if (cfg.mode == "replay") {
    s.mode = llm::Mode::replay;
    s.fixture = cfg.fixture.empty() ? cfg.task + "_v1" : cfg.fixture;
    s.fixture_dir = cfg.fixture_dir;
  } else if (cfg.mode == "live") {
    s.mode = llm::Mode::live;
  } else {
    throw ConfigError("gen mode must be replay or live");
  }
  s.archive_dir = cfg.archive_dir;
  const auto res = llm::generate_and_validate(bundle, s);
  const std::string path = out_or(cfg, cfg.task + ".kim");
  write_file(path + ".gen.json", llm::generation_report_json(res.report));
  for (const auto& w : res.report.warnings) err << "warning: " << w << "\n";
  if (!res.graph) {
    for (const auto& d : res.report.diagnostics) err << "error: " << d << "\n";
    return 1;
  }
  write_file(path, dsl::serialize(*res.graph));
  const auto& c = *res.report.census;
  out << "wrote " << path << " (" << c.gradient << " gradient, " << c.non_gradient
      << " non-gradient, " << c.frozen << " frozen)\n";
  return 0;
}

int cmd_trace(const RunConfig& cfg, std::ostream& out) {
  static const char* const kColors[] = {"#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::vector<PolicySpec> policies;
  if (cfg.expert) policies.push_back(expert_policy(env_from_string(cfg.env)));
  for (const auto& path : cfg.checkpoints) {
    require_file(path, "checkpoint");
    policies.push_back(checkpoint_policy(path, read_checkpoint(path)));
  }
  if (policies.empty()) throw ConfigError("trace needs --checkpoint or --expert");
  for (const auto& p : policies) {
    if (p.env != EnvId::racing) throw ContractViolation("trace supports racing only");
  }
  const Track track = racing_make_track(cfg.track_seed);
  std::vector<TraceGroup> groups;
  for (std::size_t i = 0; i < policies.size(); ++i) {
    RolloutOptions opt;
    opt.record_path = true;
    const auto r = rollout(policies[i], cfg.track_seed, cfg.noise, {}, opt);
    TraceGroup g;
    g.label = policies[i].id;
    g.color = kColors[i % std::size(kColors)];
    g.checkpoint_hash = policies[i].checkpoint_hash;
    g.paths.push_back(r.path);
    groups.push_back(std::move(g));
    out << policies[i].id << ": coverage " << r.outcome.coverage << " reward " << r.outcome.reward << "\n";
  }
  const std::string path = out_or(cfg, "trace.svg");
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  export_trace_svg(track, groups, path, cfg.stride);
  out << "wrote " << path << "\n";
  return 0;
}

}  // namespace kim::cli
