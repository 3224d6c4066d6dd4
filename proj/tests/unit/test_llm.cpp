#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "kim/error.hpp"
#include "kim/evaluation.hpp"
#include "kim/llm.hpp"

using namespace kim;
namespace fs = std::filesystem;

namespace {

const char* kGoodResponse =
    "[Variables]\n * h: scalar\n\n[Connections]\n * y depends on x\n\n[Code]\n"
    "```kim\nmodel tiny\ninput x: float\nparam w: gradient\noutput y = w * x\n```\n";

// Local chat-completion endpoint answering with a fixed status sequence.
struct MockServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> hits{0};
  std::string auth_seen;

  explicit MockServer(std::vector<int> statuses) {
    server.Post("/v1/chat/completions", [this, statuses](const httplib::Request& req, httplib::Response& res) {
      const int i = hits++;
      auth_seen = req.get_header_value("Authorization");
      const int status = statuses[std::min<std::size_t>(i, statuses.size() - 1)];
      res.status = status;
      if (status == 200) {
        const nlohmann::json body{{"choices", {{{"message", {{"content", kGoodResponse}}}}}}};
        res.set_content(body.dump(), "application/json");
      } else {
        res.set_content("{}", "application/json");
      }
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~MockServer() {
    server.stop();
    thread.join();
  }
};

llm::Session live_session(int port, const fs::path& archive) {
  llm::Session s;
  s.mode = llm::Mode::live;
  s.endpoint.base_url = "http://127.0.0.1:" + std::to_string(port);
  s.endpoint.api_key_env = "KIM_TEST_LLM_KEY";
  s.endpoint.backoff_seconds = 0.01;
  s.endpoint.timeout_seconds = 5;
  s.archive_dir = archive.string();
  return s;
}

fs::path temp_dir(const char* name) {
  auto p = fs::temp_directory_path() / ("kim_llm_" + std::string(name) + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("llm_bridge") {

TEST_CASE("prompt bundles") {
  const auto lander = llm::build_prompts("lander");
  CHECK(lander.user_text.find("a tensor of $(8)$") != std::string::npos);
  CHECK(lander.system_text.find("[Connections]") != std::string::npos);
  const auto racing = llm::build_prompts("racing");
  CHECK(racing.user_text.find("the steer magnitude should approach") != std::string::npos);
  const auto custom = llm::build_prompts("custom", "Keep the pole upright.");
  CHECK(custom.user_text == "Keep the pole upright.");
  CHECK_THROWS_AS(llm::build_prompts("custom"), ContractViolation);
  CHECK_THROWS_AS(llm::build_prompts("chess"), ConfigError);
}

TEST_CASE("model block extraction") {
  CHECK(llm::extract_model_text("intro\n```\nmodel a\n```\n") == "model a\n");
  CHECK_THROWS_WITH_AS(llm::extract_model_text("just prose"), doctest::Contains("no model block"), ContractViolation);
  CHECK(llm::extract_model_text("```\nfirst\n```\n[Code]\n```\nsecond\n```\n") == "second\n");
  CHECK(llm::extract_model_text("```python\nx\n```\n```kim\nmodel k\n```\n") == "model k\n");
  CHECK_THROWS_WITH_AS(llm::extract_model_text("```\na\n```\n```\nb\n```\n"), doctest::Contains("ambiguous"),
                       ContractViolation);
  CHECK_THROWS_AS(llm::extract_model_text("```\nunterminated\n"), ContractViolation);
}

TEST_CASE("replay of the shipped lander response") {
  const auto bundle = llm::build_prompts("lander");
  llm::Session s;
  s.fixture = "lander_v1";
  const auto r = llm::generate_and_validate(bundle, s);
  REQUIRE(r.graph.has_value());
  CHECK(r.report.census == ParameterCensus{13, 2, 0});
  CHECK(r.report.diagnostics.empty());
  CHECK(r.report.has_variables);
  CHECK(r.report.has_connections);
  CHECK(r.report.has_code);
  CHECK(s.attempts == 0);
  CHECK(r.report.response_hash == sha256_hex(s.raw));

  llm::Session again;
  again.fixture = "lander_v1";
  const auto r2 = llm::generate_and_validate(bundle, again);
  CHECK(*r2.graph == *r.graph);
  CHECK(llm::generation_report_json(r2.report) == llm::generation_report_json(r.report));

  llm::Session racing;
  racing.fixture = "racing_v1";
  CHECK(llm::generate_and_validate(llm::build_prompts("racing"), racing).report.census->gradient == 12);

  llm::Session missing;
  missing.fixture = "nope_v9";
  CHECK_THROWS(llm::request_generation(bundle, missing));
}

TEST_CASE("validation outcomes") {
  const auto ok = llm::validate_response(kGoodResponse);
  REQUIRE(ok.graph.has_value());

  const std::string no_conn = "[Variables]\n\n[Code]\n```kim\nmodel tiny\ninput x: float\nparam w: gradient\noutput y = w * x\n```\n";
  const auto w = llm::validate_response(no_conn);
  CHECK(w.graph.has_value());
  bool flagged = false;
  for (const auto& m : w.report.warnings) flagged |= m.find("[Connections]") != std::string::npos;
  CHECK(flagged);

  const auto bad = llm::validate_response("[Code]\n```kim\nmodel broken\ninput x: float\noutput y = w *\n```\n");
  CHECK_FALSE(bad.graph.has_value());
  CHECK_FALSE(bad.report.diagnostics.empty());
  CHECK_FALSE(bad.report.census.has_value());

  const auto cyc = llm::validate_response(
      "```kim\nmodel c\ninput x: float\nparam w: gradient\nlatent a = w * a\noutput y = a * x\n```\n");
  CHECK_FALSE(cyc.graph.has_value());
  CHECK(cyc.report.diagnostics.at(0).find("cycle") != std::string::npos);

  const auto prose = llm::validate_response("I cannot help with that.");
  CHECK_FALSE(prose.graph.has_value());
}

TEST_CASE("replay from an archive hash") {
  const auto dir = temp_dir("archive");
  const auto path = llm::archive_response(kGoodResponse, dir.string());
  const auto hash = fs::path(path).stem().string();
  CHECK(hash == sha256_hex(kGoodResponse));
  CHECK(llm::replay_text(hash, dir.string()) == kGoodResponse);
  std::ofstream(path) << "tampered";
  CHECK_THROWS_AS(llm::replay_text(hash, dir.string()), ContractViolation);
  fs::remove_all(dir);
}

TEST_CASE("live requests against a local endpoint") {
  const auto bundle = llm::build_prompts("lander");
  const auto dir = temp_dir("live");

  SUBCASE("success is archived before use") {
    ::setenv("KIM_TEST_LLM_KEY", "sk-test", 1);
    MockServer m({200});
    auto s = live_session(m.port, dir);
    const auto r = llm::generate_and_validate(bundle, s);
    CHECK(r.graph.has_value());
    CHECK(m.auth_seen == "Bearer sk-test");
    CHECK(s.attempts == 1);
    REQUIRE(fs::exists(s.archive_path));
    std::ifstream f(s.archive_path);
    std::stringstream ss;
    ss << f.rdbuf();
    CHECK(sha256_hex(ss.str()) == fs::path(s.archive_path).stem().string());
    CHECK(ss.str() == kGoodResponse);
  }
  SUBCASE("rejected credentials") {
    ::setenv("KIM_TEST_LLM_KEY", "sk-test", 1);
    MockServer m({401});
    auto s = live_session(m.port, dir);
    try {
      llm::request_generation(bundle, s);
      FAIL("expected NetworkError");
    } catch (const NetworkError& e) {
      CHECK(e.is_auth());
      CHECK(m.hits == 1);
    }
  }
  SUBCASE("server errors are retried") {
    ::setenv("KIM_TEST_LLM_KEY", "sk-test", 1);
    MockServer m({500, 503, 500, 200});
    auto s = live_session(m.port, dir);
    CHECK_THROWS_AS(llm::request_generation(bundle, s), NetworkError);
    CHECK(m.hits == 3);

    MockServer recovers({429, 200});
    auto s2 = live_session(recovers.port, dir);
    CHECK_NOTHROW(llm::request_generation(bundle, s2));
    CHECK(s2.attempts == 2);
  }
  SUBCASE("missing key") {
    ::unsetenv("KIM_TEST_LLM_KEY");
    MockServer m({200});
    auto s = live_session(m.port, dir);
    try {
      llm::request_generation(bundle, s);
      FAIL("expected NetworkError");
    } catch (const NetworkError& e) {
      CHECK(e.is_auth());
      CHECK(e.attempts() == 0);
    }
    CHECK(m.hits == 0);
  }
  fs::remove_all(dir);
}

}  // TEST_SUITE
