#pragma once

#include <stdexcept>
#include <string>

namespace umbrella {

/// Base class for every error raised by the library. `kind()` is a short
/// machine-readable tag used by the CLI error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error("dimension", w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error("numeric", w) {}
};
struct StateError : Error {
  explicit StateError(const std::string& w) : Error("state", w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};
struct ScenarioError : Error {
  explicit ScenarioError(const std::string& w) : Error("scenario", w) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error("parse", w) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& w) : Error("contract", w) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error("divergence", w) {}
};

/// Rethrows `e` as the same concrete type with `prefix` prepended.
[[noreturn]] inline void rethrow_with_context(const Error& e, const std::string& prefix) {
  const std::string w = prefix + e.what();
  const std::string& k = e.kind();
  if (k == "dimension") throw DimensionError(w);
  if (k == "numeric") throw NumericError(w);
  if (k == "state") throw StateError(w);
  if (k == "config") throw ConfigError(w);
  if (k == "scenario") throw ScenarioError(w);
  if (k == "parse") throw ParseError(w);
  if (k == "contract") throw ContractError(w);
  if (k == "divergence") throw DivergenceError(w);
  throw Error(k, w);
}

}  // namespace umbrella
