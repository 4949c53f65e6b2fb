#ifndef MVPCACHE_ERROR_HPP
#define MVPCACHE_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mvpcache {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters or mismatched configuration between pipeline stages.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data. `line()` is 1-based, or 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// The input contained no usable records.
class EmptyInputError : public Error {
 public:
  using Error::Error;
};

}  // namespace mvpcache

#endif  // MVPCACHE_ERROR_HPP
