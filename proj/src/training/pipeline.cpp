#include <charconv>
#include <chrono>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kim/dsl.hpp"
#include "kim/random.hpp"
#include "kim/training.hpp"

namespace kim {

using nlohmann::json;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw IoError("failed writing '" + path + "'");
}

std::string number(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::size_t observation_dim(EnvId env) {
  return env == EnvId::lander ? 8 : 7 + 8 * kMlpRacingTiles;
}

std::size_t action_dim(EnvId env) { return env == EnvId::lander ? 4 : 3; }

std::string_view loss_name(LossKind k) {
  return k == LossKind::mse ? "mse" : "cross_entropy_balanced";
}

}  // namespace

PolicyGraph resolve_model(const ModelSource& src, EnvId env, std::uint64_t seed) {
  switch (src.kind) {
    case ModelSource::Kind::fixture:
      return dsl::load_fixture(src.name);
    case ModelSource::Kind::dsl_file:
      return dsl::parse(read_text(src.name));
    case ModelSource::Kind::mlp:
      return build_mlp(observation_dim(env), src.hidden, action_dim(env),
                       derive_seed(seed, "init"));
  }
  throw ConfigError("unknown model source");
}

PipelineResult train_pipeline(const ModelSource& src, EnvId env, std::span<const Episode> episodes,
                              const TrainConfig& cfg_in) {
  const auto t0 = std::chrono::steady_clock::now();
  if (episodes.empty()) throw ContractViolation("no demonstration episodes");
  for (const auto& ep : episodes) {
    if (ep.env != env) {
      throw ContractViolation("demonstrations are " + std::string(to_string(ep.env)) +
                              " episodes, model targets " + std::string(to_string(env)));
    }
  }
  TrainConfig cfg = cfg_in;
  cfg.loss = env == EnvId::lander ? LossKind::cross_entropy_balanced : LossKind::mse;

  PipelineResult r;
  r.env = env;
  const PolicyGraph g = resolve_model(src, env, cfg.seed);
  const Split split = split_dataset(episodes, cfg.split, cfg.validation_fraction,
                                    derive_seed(cfg.seed, "split"));
  r.normalizer = fit_normalizer(env);
  const auto train = make_samples(g, env, episodes, split.train, r.normalizer);
  const auto validation = make_samples(g, env, episodes, split.validation, r.normalizer);
  r.n_train = train.size();
  r.n_validation = validation.size();

  std::vector<double> weights;
  if (cfg.loss == LossKind::cross_entropy_balanced) {
    std::vector<SampleTarget> targets;
    for (const auto& s : train) targets.push_back(s.target);
    weights = balanced_class_weights(targets, action_dim(env));
  }
  r.model = grid_search_train(g, train, validation, cfg, weights);
  r.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::string training_report_json(const PipelineResult& r) {
  const auto& m = r.model;
  const auto census = parameter_census(m.graph);
  json params = json::object();
  const auto offsets = parameter_offsets(m.graph);
  for (std::size_t i = 0; i < m.graph.parameters.size(); ++i) {
    const auto& p = m.graph.parameters[i];
    std::vector<double> v(m.theta.values.begin() + static_cast<std::ptrdiff_t>(offsets[i]),
                          m.theta.values.begin() + static_cast<std::ptrdiff_t>(offsets[i + 1]));
    params[p.name] = p.is_vector ? json(v) : json(v[0]);
  }
  json combos = json::array();
  for (const auto& c : m.combos) {
    combos.push_back({{"values", c.values}, {"best_loss", c.best_loss}, {"best_step", c.best_step}});
  }
  const bool ce = r.env == EnvId::lander;
  json j{
      {"model", m.graph.name},
      {"env", std::string(to_string(r.env))},
      {"loss", std::string(loss_name(ce ? LossKind::cross_entropy_balanced : LossKind::mse))},
      {"census",
       {{"gradient", census.gradient},
        {"non_gradient", census.non_gradient},
        {"frozen", census.frozen},
        {"total", census.total()}}},
      {"n_train", r.n_train},
      {"n_validation", r.n_validation},
      {"steps", m.train_curve.size()},
      {"chosen_combo", m.combo},
      {"best_step", m.best_step},
      {"best_loss", m.best_loss},
      {"combos", std::move(combos)},
      {"parameters", std::move(params)},
      {"train_curve", m.train_curve},
      {"validation_curve", m.validation_curve},
  };
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kParamsMarker = "== params ==";
}

std::string checkpoint_text(const PolicyGraph& g, const ParameterVector& theta, EnvId env) {
  const auto offsets = parameter_offsets(g);
  if (theta.values.size() != offsets.back()) {
    throw ContractViolation("checkpoint parameters do not match the graph");
  }
  std::string out = "# checkpoint env=" + std::string(to_string(env)) + "\n";
  out += dsl::serialize(g);
  out += "\n" + std::string(kParamsMarker) + "\n";
  for (std::size_t i = 0; i < g.parameters.size(); ++i) {
    const auto& p = g.parameters[i];
    out += p.name + " = ";
    if (p.is_vector) out += "[";
    for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k) {
      if (k > offsets[i]) out += ", ";
      out += number(theta.values[k]);
    }
    if (p.is_vector) out += "]";
    out += "\n";
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view text) {
  const std::string_view head = "# checkpoint env=";
  if (text.substr(0, head.size()) != head) throw ContractViolation("not a checkpoint file");
  const auto eol = text.find('\n');
  Checkpoint c;
  c.env = env_from_string(text.substr(head.size(), eol - head.size()));

  const std::string marker = "\n" + std::string(kParamsMarker) + "\n";
  const auto at = text.find(marker);
  if (at == std::string_view::npos) throw ContractViolation("checkpoint has no params block");
  c.graph = dsl::parse(text.substr(0, at + 1));
  infer_shapes(c.graph);

  const auto offsets = parameter_offsets(c.graph);
  c.theta.values.assign(offsets.back(), 0.0);
  std::vector<bool> seen(c.graph.parameters.size(), false);
  std::istringstream body{std::string(text.substr(at + marker.size()))};
  std::string line;
  int line_no = 0;
  while (std::getline(body, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      throw ContractViolation("checkpoint params line " + std::to_string(line_no) + ": " + why);
    };
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'name = value'");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string name = trim(line.substr(0, eq));
    std::string rhs = trim(line.substr(eq + 1));
    std::size_t i = 0;
    while (i < c.graph.parameters.size() && c.graph.parameters[i].name != name) ++i;
    if (i == c.graph.parameters.size()) fail("unknown parameter '" + name + "'");
    if (seen[i]) fail("duplicate parameter '" + name + "'");
    seen[i] = true;
    const auto& p = c.graph.parameters[i];
    if (p.is_vector) {
      if (rhs.size() < 2 || rhs.front() != '[' || rhs.back() != ']') fail("expected [a, b, ...]");
      rhs = rhs.substr(1, rhs.size() - 2);
    }
    std::vector<double> vals;
    std::istringstream parts(rhs);
    std::string item;
    while (std::getline(parts, item, ',')) {
      item = trim(item);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc() || ptr != item.data() + item.size()) fail("bad number '" + item + "'");
      vals.push_back(v);
    }
    if (vals.size() != p.length) fail("'" + name + "' needs " + std::to_string(p.length) + " values");
    std::copy(vals.begin(), vals.end(),
              c.theta.values.begin() + static_cast<std::ptrdiff_t>(offsets[i]));
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw ContractViolation("checkpoint misses parameter '" + c.graph.parameters[i].name + "'");
  }
  return c;
}

void write_checkpoint(const std::string& path, const PipelineResult& r) {
  write_text(path, checkpoint_text(r.model.graph, r.model.theta, r.env));
}

Checkpoint read_checkpoint(const std::string& path) {
  try {
    return parse_checkpoint(read_text(path));
  } catch (const ContractViolation& e) {
    throw ContractViolation(path + ": " + e.what());
  }
}

}  // namespace kim
