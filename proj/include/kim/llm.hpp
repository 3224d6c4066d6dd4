#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kim/graph.hpp"

namespace kim::llm {

struct PromptBundle {
  std::string task;         // lander | racing | custom
  std::string system_text;  // staged [Variables] -> [Connections] -> [Code] instructions
  std::string user_text;    // task knowledge
};

/// Built-in tasks use the shipped prompt texts; `custom` passes `knowledge`
/// through unchanged (it must be non-empty).
PromptBundle build_prompts(std::string_view task, std::string_view knowledge = {});

struct Endpoint {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-4o";
  double temperature = 0.0;
  int seed = 0;
  std::string api_key_env = "KIM_LLM_API_KEY";
  int max_attempts = 3;
  double backoff_seconds = 1.0;  // doubled after each failed attempt
  double timeout_seconds = 120.0;
};

enum class Mode { live, replay };

struct Session {
  Endpoint endpoint;
  Mode mode = Mode::replay;
  /// Replay: fixture id (lander_v1, racing_v1) or an archive hash.
  std::string fixture;
  /// Replay source directory; empty uses the fixtures compiled into the library.
  std::string fixture_dir;
  std::string archive_dir = "archives";

  // Filled by request_generation.
  std::string raw;
  std::string response_hash;
  std::string archive_path;  // live only
  int attempts = 0;
};

/// Live: one chat-completion call (retried on transport errors and 429/5xx),
/// archived under archive_dir/<sha256>.txt before returning. Replay: the
/// recorded text, without touching the network.
std::string request_generation(const PromptBundle& bundle, Session& session);

/// Writes `text` to dir/<sha256>.txt and returns the path.
std::string archive_response(std::string_view text, const std::string& dir);

/// Recorded response text for replay.
std::string replay_text(std::string_view fixture, const std::string& fixture_dir);

/// Contents of the model's code block: the last fenced block after the last
/// "[Code]" marker, else the only `kim`-labelled block, else the only block.
/// Throws ContractViolation otherwise.
std::string extract_model_text(std::string_view raw);

struct GenerationReport {
  bool has_variables = false;
  bool has_connections = false;
  bool has_code = false;
  std::vector<std::string> warnings;
  std::vector<std::string> diagnostics;  // errors; non-empty means no graph
  std::optional<ParameterCensus> census;
  std::string response_hash;
  std::string archive_path;
  std::string dsl;
};

struct GenerationResult {
  std::optional<PolicyGraph> graph;
  GenerationReport report;
};

/// request -> extract -> parse -> validate -> lint. Failures come back as
/// diagnostics without a graph; network errors propagate.
GenerationResult generate_and_validate(const PromptBundle& bundle, Session& session);

/// Validation stages only, for text already in hand.
GenerationResult validate_response(std::string_view raw);

std::string generation_report_json(const GenerationReport& r);

}  // namespace kim::llm
