#pragma once

#include <stdexcept>
#include <string>

namespace uimer {

// Base of every error the library raises on bad input or configuration.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates a documented contract (shapes, masks, enumerations).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class AnnotationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class SamplingError : public Error {
 public:
  SamplingError(const std::string& what, std::string label)
      : Error(what), label_(std::move(label)) {}
  const std::string& label() const { return label_; }

 private:
  std::string label_;
};

// An example whose rationale structure cannot produce a contrast.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

}  // namespace uimer
