#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace untangle {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A forward computation produced NaN or Inf, or a row had no valid entries.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Invalid configuration (flags, generator settings, checkpoint mismatch).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Semantically invalid data (unknown ids, universe mismatch, bad index).
class InputError : public Error {
 public:
  using Error::Error;
};

/// backward() was invoked a second time on an already-consumed graph.
class StaleGraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace untangle
