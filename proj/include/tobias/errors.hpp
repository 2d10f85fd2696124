#pragma once

#include <stdexcept>
#include <string>

namespace tobias {

// Error categories map to CLI exit codes: config=2, io=3, invariant=4.
enum class ErrorCategory { Config = 2, Io = 3, Invariant = 4 };

class Error : public std::runtime_error {
public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(msg), category_(cat) {}
  ErrorCategory category() const { return category_; }

private:
  ErrorCategory category_;
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& msg) : Error(ErrorCategory::Config, msg) {}
};

class IoError : public Error {
public:
  explicit IoError(const std::string& msg) : Error(ErrorCategory::Io, msg) {}
};

class ParseError : public IoError {
public:
  explicit ParseError(const std::string& msg) : IoError(msg) {}
};

class InvariantError : public Error {
public:
  explicit InvariantError(const std::string& msg) : Error(ErrorCategory::Invariant, msg) {}
};

// Shape/axis mismatches in kernels and network wiring.
class DimensionError : public InvariantError {
public:
  explicit DimensionError(const std::string& msg) : InvariantError(msg) {}
};

// Backward requested without a recorded forward pass, and similar misuse.
class StateError : public InvariantError {
public:
  explicit StateError(const std::string& msg) : InvariantError(msg) {}
};

// A saliency mask with no foreground cells; callers may fall back to the
// whole image instead of propagating.
class EmptyForegroundError : public InvariantError {
public:
  explicit EmptyForegroundError(const std::string& msg) : InvariantError(msg) {}
};

}  // namespace tobias
