#pragma once

#include <stdexcept>
#include <string>

namespace rqmc {

// Base for every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed files, invalid configuration, unsupported options.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public ConfigError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : ConfigError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Numerical failures: domain violations, non-finite values, solver breakdown.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DomainError : public NumericError {
 public:
  using NumericError::NumericError;
};

class RangeError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace rqmc
