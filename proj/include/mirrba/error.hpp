#pragma once

#include <stdexcept>
#include <string>

namespace mirrba {

// Base for all engine errors. The CLI maps the subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible extents, channel counts or kernel shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument values (configs, factors, slopes ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated files.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during optimization.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int level, int iteration)
      : Error(what), level_(level), iteration_(iteration) {}
  int level() const { return level_; }
  int iteration() const { return iteration_; }

 private:
  int level_;
  int iteration_;
};

}  // namespace mirrba
