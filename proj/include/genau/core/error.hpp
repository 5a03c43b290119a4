#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace genau {

// Base of every error the library throws. `module()` names the subsystem so
// the CLI can report "<module>: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(what), module_(std::move(module)) {}
  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error("numeric-core", what) {}
};

// Violated call contract (non-scalar loss, missing tape, ...).
class ContractError : public Error {
 public:
  ContractError(const std::string& module, const std::string& what) : Error(module, what) {}
};

class FormatError : public Error {
 public:
  FormatError(const std::string& module, const std::string& what) : Error(module, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace genau
