#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace panodepth {

// Base of every error the library reports. The CLI maps the concrete type to an
// exit status (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid flags, spec values or scene descriptions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside the domain of a geometric mapping.
class DomainError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed binary payload; carries the byte offset at which decoding failed.
class ParseError : public IoError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : IoError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Scene text syntax error; line is 1-based.
class SceneParseError : public ConfigError {
 public:
  SceneParseError(const std::string& what, int line)
      : ConfigError("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

// A non-finite value showed up where only finite values are allowed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

inline int exit_code(const Error& e) {
  if (dynamic_cast<const IoError*>(&e)) return 3;
  if (dynamic_cast<const NumericalError*>(&e)) return 4;
  return 2;
}

}  // namespace panodepth
