#pragma once

#include <stdexcept>
#include <string>

namespace fasm {

/// Malformed or inconsistent scenario / chain description.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fasm
