#pragma once

#include <stdexcept>
#include <string>

namespace kim {

/// Base of every error thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A graph is malformed (cycle, unresolved name, ...).
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Input or intermediate shapes disagree at bind time.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared while evaluating or differentiating a node.
class NumericFault : public Error {
 public:
  NumericFault(std::string node, const std::string& what)
      : Error("numeric fault in node '" + node + "': " + what), node_(std::move(node)) {}
  const std::string& node() const { return node_; }

 private:
  std::string node_;
};

/// A caller broke an operation's precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Bad configuration (unknown keys, missing grids, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File-system failures; the message always carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Network or authentication failure talking to an LLM endpoint.
class NetworkError : public Error {
 public:
  NetworkError(const std::string& what, bool auth, int attempts)
      : Error(what), auth_(auth), attempts_(attempts) {}
  bool is_auth() const { return auth_; }
  int attempts() const { return attempts_; }

 private:
  bool auth_;
  int attempts_;
};

}  // namespace kim
