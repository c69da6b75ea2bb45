#pragma once
// Error taxonomy. The CLI maps these onto its exit codes
// (config error -> 2, missing dependency -> 3, numeric failure -> 4).

#include <stdexcept>
#include <string>

namespace srpo {

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DependencyError : std::runtime_error {
  explicit DependencyError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace srpo
