#include <cctype>
#include <charconv>
#include <optional>

#include "kim/dsl.hpp"

namespace kim::dsl {

namespace {

std::string at_span(const std::string& message, SourceSpan s) {
  return std::to_string(s.line) + ":" + std::to_string(s.column) + ": " + message;
}

enum class Tok { ident, number, punct, newline, end };

struct Token {
  Tok kind = Tok::end;
  std::string text;
  SourceSpan span;
  double value = 0.0;
  bool integer = false;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    int depth = 0;
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else if (c == '\n') {
        if (depth == 0) out.push_back({Tok::newline, "\n", {line_, col_, 1}});
        advance();
      } else if (c == ' ' || c == '\t' || c == '\r') {
        advance();
      } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        const SourceSpan s{line_, col_, 0};
        const auto start = pos_;
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
          advance();
        }
        out.push_back(finish(Tok::ident, start, s));
      } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                 (c == '.' && pos_ + 1 < src_.size() &&
                  std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
        out.push_back(number());
      } else if (std::string_view("()[],:=+-*").find(c) != std::string_view::npos) {
        const SourceSpan s{line_, col_, 1};
        if (c == '(' || c == '[') ++depth;
        if ((c == ')' || c == ']') && depth > 0) --depth;
        advance();
        out.push_back({Tok::punct, std::string(1, c), s});
      } else {
        throw ParseError("unexpected character '" + std::string(1, c) + "'", {line_, col_, 1});
      }
    }
    out.push_back({Tok::end, "", {line_, col_, 0}});
    return out;
  }

 private:
  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  Token finish(Tok kind, std::size_t start, SourceSpan s) {
    s.length = static_cast<int>(pos_ - start);
    return {kind, std::string(src_.substr(start, pos_ - start)), s};
  }

  Token number() {
    const SourceSpan s{line_, col_, 0};
    const auto start = pos_;
    bool integer = true;
    auto digits = [&] {
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
    };
    digits();
    if (pos_ < src_.size() && src_[pos_] == '.') {
      integer = false;
      advance();
      digits();
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      integer = false;
      advance();
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) advance();
      const auto exp_start = pos_;
      digits();
      if (pos_ == exp_start) throw ParseError("malformed exponent", {s.line, s.column, 1});
    }
    Token t = finish(Tok::number, start, s);
    const auto* first = t.text.data();
    const auto* last = first + t.text.size();
    auto [ptr, ec] = std::from_chars(first, last, t.value);
    if (ec != std::errc() || ptr != last) throw ParseError("malformed number '" + t.text + "'", s);
    t.integer = integer;
    return t;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

class Parser {
 public:
  Parser(std::vector<Token> toks, DslDocument& doc) : toks_(std::move(toks)), doc_(doc) {}

  void run() {
    skip_newlines();
    const Token& kw = peek();
    if (!is_ident("model")) fail("expected 'model NAME' as the first declaration", kw.span);
    next();
    doc_.graph.name = expect_ident("model name").text;
    end_of_decl();
    while (true) {
      skip_newlines();
      if (peek().kind == Tok::end) break;
      const Token& t = peek();
      if (is_ident("input")) {
        next();
        input();
      } else if (is_ident("param")) {
        next();
        param();
      } else if (is_ident("latent") || is_ident("output")) {
        const bool is_output = t.text == "output";
        next();
        node(is_output);
      } else {
        fail("expected input, param, latent or output, found '" + t.text + "'", t.span);
      }
      end_of_decl();
    }
  }

 private:
  [[noreturn]] void fail(const std::string& msg, SourceSpan s) { throw ParseError(msg, s); }

  const Token& peek() const { return toks_[i_]; }
  const Token& next() { return toks_[i_ < toks_.size() - 1 ? i_++ : i_]; }
  bool is_ident(std::string_view word) const {
    return peek().kind == Tok::ident && peek().text == word;
  }
  bool is_punct(char c) const {
    return peek().kind == Tok::punct && peek().text[0] == c;
  }
  void skip_newlines() {
    while (peek().kind == Tok::newline) next();
  }

  const Token& expect_ident(const std::string& what) {
    if (peek().kind != Tok::ident) fail("expected " + what, peek().span);
    return next();
  }
  void expect(char c) {
    if (!is_punct(c)) {
      const std::string found = peek().kind == Tok::newline ? "end of line"
                                : peek().kind == Tok::end  ? "end of input"
                                                           : "'" + peek().text + "'";
      fail("expected '" + std::string(1, c) + "', found " + found, peek().span);
    }
    next();
  }
  void end_of_decl() {
    if (peek().kind != Tok::newline && peek().kind != Tok::end) {
      fail("unexpected '" + peek().text + "' after declaration", peek().span);
    }
  }

  void declare(const Token& name) {
    if (!doc_.spans.emplace(name.text, name.span).second) {
      fail("'" + name.text + "' is declared twice", name.span);
    }
  }

  Extent extent(int axis) {
    const Token& t = peek();
    if (t.kind == Tok::number) {
      if (!t.integer || t.value < 0) fail("extent must be a non-negative integer", t.span);
      next();
      return {static_cast<std::size_t>(t.value), false, ""};
    }
    if (t.kind == Tok::ident) {
      if (axis != 0) fail("only the first axis may have a runtime extent", t.span);
      next();
      return {0, true, t.text};
    }
    fail("expected an extent", t.span);
  }

  void input() {
    const Token& name = expect_ident("input name");
    declare(name);
    InputSpec in;
    in.name = name.text;
    in.span = name.span;
    expect(':');
    const Token& type = expect_ident("float or bool");
    if (type.text == "bool") {
      in.boolean = true;
    } else if (type.text != "float") {
      fail("input type must be float or bool", type.span);
    }
    if (is_punct('[')) {
      next();
      in.shape.rank = 1;
      in.shape.dims[0] = extent(0);
      if (is_punct(',')) {
        next();
        in.shape.rank = 2;
        in.shape.dims[1] = extent(1);
      }
      expect(']');
    }
    doc_.graph.inputs.push_back(std::move(in));
  }

  double signed_number() {
    bool negative = false;
    if (is_punct('-') || is_punct('+')) {
      negative = peek().text == "-";
      next();
    }
    if (peek().kind != Tok::number) fail("expected a number", peek().span);
    const double v = next().value;
    return negative ? -v : v;
  }

  std::vector<double> param_value(const Parameter& p) {
    if (!p.is_vector) return {signed_number()};
    const SourceSpan open = peek().span;
    expect('[');
    std::vector<double> v{signed_number()};
    while (is_punct(',')) {
      next();
      v.push_back(signed_number());
    }
    expect(']');
    if (v.size() != p.length) {
      fail("'" + p.name + "' has length " + std::to_string(p.length) + " but " +
               std::to_string(v.size()) + " values were given",
           open);
    }
    return v;
  }

  void param() {
    const Token& name = expect_ident("parameter name");
    declare(name);
    Parameter p;
    p.name = name.text;
    p.span = name.span;
    expect(':');
    const Token& kind = expect_ident("gradient or nongradient");
    if (kind.text == "nongradient") {
      p.kind = ParamKind::non_gradient;
    } else if (kind.text != "gradient") {
      fail("parameter kind must be gradient or nongradient", kind.span);
    }
    if (is_punct('[')) {
      next();
      const Token& n = peek();
      if (n.kind != Tok::number || !n.integer || n.value < 1) {
        fail("parameter length must be a positive integer", n.span);
      }
      next();
      p.length = static_cast<std::size_t>(n.value);
      p.is_vector = true;
      expect(']');
    }
    bool seen_sign = false, seen_grid = false;
    while (peek().kind != Tok::newline && peek().kind != Tok::end) {
      const Token& t = peek();
      if (is_punct('=')) {
        if (p.init) fail("duplicate init value", t.span);
        next();
        p.init = param_value(p);
      } else if (is_ident("sign")) {
        if (seen_sign) fail("duplicate sign", t.span);
        seen_sign = true;
        next();
        expect('(');
        if (is_punct('+')) {
          p.correlation = Correlation::positive;
        } else if (is_punct('-')) {
          p.correlation = Correlation::negative;
        } else {
          fail("sign must be + or -", peek().span);
        }
        next();
        expect(')');
      } else if (is_ident("grid")) {
        if (seen_grid) fail("duplicate grid", t.span);
        seen_grid = true;
        next();
        expect('(');
        p.grid.push_back(param_value(p));
        while (is_punct(',')) {
          next();
          p.grid.push_back(param_value(p));
        }
        expect(')');
      } else if (is_ident("frozen")) {
        if (p.frozen) fail("duplicate frozen flag", t.span);
        p.frozen = true;
        next();
      } else {
        fail("unexpected '" + t.text + "' in parameter declaration", t.span);
      }
    }
    doc_.graph.parameters.push_back(std::move(p));
  }

  void node(bool is_output) {
    const Token& name = expect_ident(is_output ? "output name" : "latent name");
    declare(name);
    NodeSpec n;
    n.name = name.text;
    n.span = name.span;
    expect('=');
    n.expr = expr();
    (is_output ? doc_.graph.outputs : doc_.graph.latents).push_back(std::move(n));
  }

  Expr expr() {
    Expr lhs = term();
    while (is_punct('+') || is_punct('-')) {
      const Token& op = next();
      Expr rhs = term();
      lhs = Expr::call(op.text == "+" ? OpKind::add : OpKind::sub, {std::move(lhs), std::move(rhs)},
                       op.span);
    }
    return lhs;
  }

  Expr term() {
    Expr lhs = unary();
    while (is_punct('*')) {
      const Token& op = next();
      Expr rhs = unary();
      lhs = Expr::call(OpKind::mul, {std::move(lhs), std::move(rhs)}, op.span);
    }
    return lhs;
  }

  Expr unary() {
    if (is_punct('-')) {
      const Token& op = next();
      return Expr::call(OpKind::neg, {unary()}, op.span);
    }
    return primary();
  }

  Expr primary() {
    const Token& t = peek();
    if (t.kind == Tok::number) {
      if (!t.integer) {
        fail("constant " + t.text + " in expression; constants must be declared as parameters",
             t.span);
      }
      next();
      return Expr::lit(t.value, true, t.span);
    }
    if (is_punct('(')) {
      next();
      Expr e = expr();
      expect(')');
      return e;
    }
    if (is_punct('[')) {
      next();
      std::vector<Expr> items;
      if (!is_punct(']')) {
        items.push_back(expr());
        while (is_punct(',')) {
          next();
          items.push_back(expr());
        }
      }
      expect(']');
      return Expr::list(std::move(items), t.span);
    }
    if (t.kind == Tok::ident) {
      next();
      if (!is_punct('(')) return Expr::ref(t.text, t.span);
      const auto op = op_from_name(t.text);
      if (!op) fail("unknown operation '" + t.text + "'", t.span);
      next();
      std::vector<Expr> args;
      if (!is_punct(')')) {
        args.push_back(expr());
        while (is_punct(',')) {
          next();
          args.push_back(expr());
        }
      }
      expect(')');
      return Expr::call(*op, std::move(args), t.span);
    }
    const std::string found = t.kind == Tok::newline ? "end of line"
                              : t.kind == Tok::end  ? "end of input"
                                                    : "'" + t.text + "'";
    fail("expected an expression, found " + found, t.span);
  }

  std::vector<Token> toks_;
  std::size_t i_ = 0;
  DslDocument& doc_;
};

}  // namespace

ParseError::ParseError(const std::string& message, SourceSpan span)
    : Error(at_span(message, span)), span_(span), detail_(message) {}

namespace {
std::string join_diagnostics(const std::vector<Diagnostic>& diags) {
  std::string out;
  for (const auto& d : diags) {
    if (!out.empty()) out += "\n";
    out += format_diagnostic(d);
  }
  return out;
}
}  // namespace

ValidationError::ValidationError(std::vector<Diagnostic> diags)
    : StructuralError(join_diagnostics(diags)), diags_(std::move(diags)) {}

std::string format_diagnostic(const Diagnostic& d) {
  std::string out;
  if (d.span.line > 0) out = std::to_string(d.span.line) + ":" + std::to_string(d.span.column) + ": ";
  out += std::string(to_string(d.category)) + ": ";
  if (!d.node.empty()) out += d.node + ": ";
  return out + d.message;
}

DslDocument parse_document(std::string_view text) {
  DslDocument doc;
  doc.source = std::string(text);
  Parser(Lexer(text).run(), doc).run();
  auto diags = validate_graph(doc.graph);
  if (!diags.empty()) throw ValidationError(std::move(diags));
  return doc;
}

PolicyGraph parse_unchecked(std::string_view text) {
  DslDocument doc;
  Parser(Lexer(text).run(), doc).run();
  return std::move(doc.graph);
}

PolicyGraph parse(std::string_view text) { return std::move(parse_document(text).graph); }

}  // namespace kim::dsl
