#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "kim/dsl.hpp"
#include "kim/error.hpp"
#include "kim/evaluation.hpp"
#include "kim/llm.hpp"

namespace kim::embedded {
extern const std::string_view kLanderResponse;
extern const std::string_view kRacingResponse;
extern const std::string_view kSystemDsl;
extern const std::string_view kLanderTask;
extern const std::string_view kRacingTask;
}  // namespace kim::embedded

namespace kim::llm {

using nlohmann::json;

PromptBundle build_prompts(std::string_view task, std::string_view knowledge) {
  PromptBundle b;
  b.task = std::string(task);
  b.system_text = std::string(embedded::kSystemDsl);
  if (task == "lander") {
    b.user_text = std::string(embedded::kLanderTask);
  } else if (task == "racing") {
    b.user_text = std::string(embedded::kRacingTask);
  } else if (task == "custom") {
    if (knowledge.find_first_not_of(" \t\r\n") == std::string_view::npos) {
      throw ContractViolation("custom task needs non-empty knowledge text");
    }
    b.user_text = std::string(knowledge);
  } else {
    throw ConfigError("unknown task '" + std::string(task) + "' (lander, racing or custom)");
  }
  return b;
}

std::string archive_response(std::string_view text, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create archive directory '" + dir + "': " + ec.message());
  const std::string path = (std::filesystem::path(dir) / (sha256_hex(text) + ".txt")).string();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw IoError("failed writing '" + path + "'");
  return path;
}

std::string replay_text(std::string_view fixture, const std::string& fixture_dir) {
  if (fixture_dir.empty()) {
    if (fixture == "lander_v1") return std::string(embedded::kLanderResponse);
    if (fixture == "racing_v1") return std::string(embedded::kRacingResponse);
    throw ConfigError("no built-in response '" + std::string(fixture) +
                      "' (lander_v1, racing_v1); set a fixture directory");
  }
  const std::string path =
      (std::filesystem::path(fixture_dir) / (std::string(fixture) + ".txt")).string();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  std::string text = ss.str();
  // Archive names are content hashes; refuse a file that no longer matches.
  const bool hashed = fixture.size() == 64 &&
                      fixture.find_first_not_of("0123456789abcdef") == std::string_view::npos;
  if (hashed && sha256_hex(text) != fixture) {
    throw ContractViolation("archive '" + path + "' does not match its hash");
  }
  return text;
}

namespace {

struct Target {
  std::string scheme_host_port;
  std::string path_prefix;
};

Target split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint URL needs a scheme: '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  std::string prefix = url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path_start), prefix};
}

std::string live_request(const PromptBundle& bundle, Session& s) {
  const Endpoint& e = s.endpoint;
  const char* key = std::getenv(e.api_key_env.c_str());
  if (!key || !*key) {
    throw NetworkError("environment variable " + e.api_key_env + " is not set", true, 0);
  }
  const json body{{"model", e.model},
                  {"temperature", e.temperature},
                  {"seed", e.seed},
                  {"messages",
                   json::array({{{"role", "system"}, {"content", bundle.system_text}},
                                {{"role", "user"}, {"content", bundle.user_text}}})}};
  const Target target = split_url(e.base_url);
  httplib::Client client(target.scheme_host_port);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(e.timeout_seconds));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  client.set_bearer_token_auth(key);

  const int max_attempts = std::max(1, e.max_attempts);
  double backoff = e.backoff_seconds;
  std::string last_error;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    s.attempts = attempt;
    auto res = client.Post(target.path_prefix + e.path, body.dump(), "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
    } else if (res->status == 401 || res->status == 403) {
      throw NetworkError("authentication rejected (HTTP " + std::to_string(res->status) + ")", true,
                         attempt);
    } else if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
    } else if (res->status != 200) {
      throw NetworkError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200),
                         false, attempt);
    } else {
      std::string content;
      try {
        const json j = json::parse(res->body);
        const auto& c = j.at("choices").at(0).at("message").at("content");
        if (c.is_string()) content = c.get<std::string>();
      } catch (const json::exception& ex) {
        throw NetworkError(std::string("malformed completion response: ") + ex.what(), false,
                           attempt);
      }
      if (content.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw NetworkError("empty completion", false, attempt);
      }
      return content;
    }
    if (attempt < max_attempts) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
  }
  throw NetworkError(last_error + " after " + std::to_string(max_attempts) + " attempts", false,
                     max_attempts);
}

struct Fence {
  std::size_t line = 0;  // 1-based line of the opening fence
  std::size_t marker_pos = 0;
  std::string label;
  std::string body;
};

std::vector<Fence> fenced_blocks(std::string_view raw) {
  std::vector<Fence> out;
  std::size_t pos = 0, line_no = 0;
  std::optional<Fence> open;
  while (pos <= raw.size()) {
    auto end = raw.find('\n', pos);
    if (end == std::string_view::npos) end = raw.size();
    std::string_view line = raw.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    const auto first = line.find_first_not_of(" \t");
    const bool fence = first != std::string_view::npos && line.substr(first).starts_with("```");
    if (fence && !open) {
      Fence f;
      f.line = line_no;
      f.marker_pos = pos;
      auto label = line.substr(first + 3);
      const auto a = label.find_first_not_of(" \t");
      const auto b = label.find_last_not_of(" \t");
      if (a != std::string_view::npos) f.label = std::string(label.substr(a, b - a + 1));
      open = std::move(f);
    } else if (fence && open) {
      out.push_back(std::move(*open));
      open.reset();
    } else if (open) {
      open->body.append(line);
      open->body.push_back('\n');
    }
    if (end == raw.size()) break;
    pos = end + 1;
  }
  if (open) throw ContractViolation("unterminated code block opened on line " + std::to_string(open->line));
  return out;
}

}  // namespace

std::string request_generation(const PromptBundle& bundle, Session& s) {
  if (s.mode == Mode::replay) {
    s.raw = replay_text(s.fixture, s.fixture_dir);
    s.attempts = 0;
    s.archive_path.clear();
  } else {
    s.raw = live_request(bundle, s);
    s.archive_path = archive_response(s.raw, s.archive_dir);
  }
  if (s.raw.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw ContractViolation("empty completion");
  }
  s.response_hash = sha256_hex(s.raw);
  return s.raw;
}

std::string extract_model_text(std::string_view raw) {
  const auto blocks = fenced_blocks(raw);
  if (blocks.empty()) throw ContractViolation("no model block: the response has no fenced code block");
  const auto code = raw.rfind("[Code]");
  if (code != std::string_view::npos) {
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
      if (it->marker_pos > code) return it->body;
    }
  }
  std::vector<const Fence*> kim;
  for (const auto& b : blocks) {
    if (b.label == "kim") kim.push_back(&b);
  }
  if (kim.size() == 1) return kim[0]->body;
  if (blocks.size() == 1) return blocks[0].body;
  std::string msg = "ambiguous model block; candidates:";
  for (const auto& b : blocks) {
    msg += " line " + std::to_string(b.line) + (b.label.empty() ? "" : " (" + b.label + ")") + ";";
  }
  msg.pop_back();
  throw ContractViolation(msg);
}

GenerationResult validate_response(std::string_view raw) {
  GenerationResult out;
  GenerationReport& r = out.report;
  r.has_variables = raw.find("[Variables]") != std::string_view::npos;
  r.has_connections = raw.find("[Connections]") != std::string_view::npos;
  r.has_code = raw.find("[Code]") != std::string_view::npos;
  if (!r.has_variables) r.warnings.push_back("response has no [Variables] section");
  if (!r.has_connections) r.warnings.push_back("response has no [Connections] section");
  if (!r.has_code) r.warnings.push_back("response has no [Code] section");
  try {
    r.dsl = extract_model_text(raw);
  } catch (const ContractViolation& e) {
    r.diagnostics.push_back(e.what());
    return out;
  }
  PolicyGraph g;
  try {
    g = dsl::parse(r.dsl);
  } catch (const dsl::ParseError& e) {
    r.diagnostics.push_back(e.what());
    return out;
  } catch (const dsl::ValidationError& e) {
    for (const auto& d : e.diagnostics()) r.diagnostics.push_back(dsl::format_diagnostic(d));
    return out;
  } catch (const Error& e) {
    r.diagnostics.push_back(e.what());
    return out;
  }
  for (const auto& w : dsl::lint(g)) r.warnings.push_back(w.subject + ": " + w.message);
  for (const auto& p : g.parameters) {
    if (p.kind == ParamKind::gradient && p.correlation == Correlation::none && !p.init) {
      r.warnings.push_back(p.name + ": no correlation sign and no init");
    }
  }
  r.census = parameter_census(g);
  out.graph = std::move(g);
  return out;
}

GenerationResult generate_and_validate(const PromptBundle& bundle, Session& s) {
  request_generation(bundle, s);
  GenerationResult out = validate_response(s.raw);
  out.report.response_hash = s.response_hash;
  out.report.archive_path = s.archive_path;
  return out;
}

std::string generation_report_json(const GenerationReport& r) {
  json j{{"schema", "kim-gen/1"},
         {"response_hash", r.response_hash},
         {"stages", {{"variables", r.has_variables}, {"connections", r.has_connections},
                     {"code", r.has_code}}},
         {"warnings", r.warnings},
         {"diagnostics", r.diagnostics},
         {"valid", r.diagnostics.empty() && r.census.has_value()}};
  if (!r.archive_path.empty()) j["archive"] = r.archive_path;
  if (r.census) {
    j["census"] = {{"gradient", r.census->gradient}, {"non_gradient", r.census->non_gradient},
                   {"frozen", r.census->frozen}, {"total", r.census->total()}};
  }
  return j.dump(2) + "\n";
}

}  // namespace kim::llm
