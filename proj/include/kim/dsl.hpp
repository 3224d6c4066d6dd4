#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "kim/error.hpp"
#include "kim/graph.hpp"

namespace kim::dsl {

/// Lexical or syntactic error; the span points into the offending token.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, SourceSpan span);
  SourceSpan span() const { return span_; }
  const std::string& detail() const { return detail_; }

 private:
  SourceSpan span_;
  std::string detail_;
};

/// Parsed text that failed validate_graph.
class ValidationError : public StructuralError {
 public:
  explicit ValidationError(std::vector<Diagnostic> diags);
  const std::vector<Diagnostic>& diagnostics() const { return diags_; }

 private:
  std::vector<Diagnostic> diags_;
};

struct DslDocument {
  std::string source;
  PolicyGraph graph;
  /// Declaration spans keyed by input, parameter, latent or output name.
  std::map<std::string, SourceSpan> spans;
};

/// Syntax only; the returned graph may still fail validate_graph.
PolicyGraph parse_unchecked(std::string_view text);

/// Parses and validates; throws ParseError or ValidationError.
PolicyGraph parse(std::string_view text);
DslDocument parse_document(std::string_view text);

/// Canonical text. parse(serialize(g)) == g.
std::string serialize(const PolicyGraph& g);

/// "line:col: category: message" for one diagnostic.
std::string format_diagnostic(const Diagnostic& d);

struct Warning {
  std::string subject;
  std::string message;
};

std::vector<Warning> lint(const PolicyGraph& g);

/// lander_kim | racing_kim | mlp_template. Throws ConfigError for other names.
PolicyGraph load_fixture(std::string_view name);
/// Shipped DSL text of a fixture (mlp_template is rendered from build_mlp).
std::string fixture_text(std::string_view name);
std::vector<std::string> fixture_names();

}  // namespace kim::dsl
