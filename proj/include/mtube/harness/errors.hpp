#pragma once

#include <stdexcept>
#include <string>

namespace mtube {

// Malformed input text; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input that violates a data invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A non-finite value surfaced during computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ErrorKind { usage, data, numeric };

// Wraps a failure inside run_pipeline with the stage that raised it.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string stage, ErrorKind kind, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)), kind_(kind) {}
  const std::string& stage() const noexcept { return stage_; }
  ErrorKind kind() const noexcept { return kind_; }

 private:
  std::string stage_;
  ErrorKind kind_;
};

}  // namespace mtube
