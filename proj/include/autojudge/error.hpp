#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace autojudge {

// Process exit codes used by the CLI.
enum class ExitCode : int {
  kSuccess = 0,
  kConfig = 1,
  kData = 2,
  kBackend = 3,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept = 0;
};

/// Invalid configuration, missing inputs, unknown model ids.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kConfig; }
};

/// Malformed or inconsistent data: bad files, degenerate statistics.
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kData; }
};

class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

/// Not enough values in a group to compute quantiles.
class DegenerateInputError : public DataError {
 public:
  DegenerateInputError(std::string group, const std::string& what)
      : DataError(what), group_(std::move(group)) {}
  const std::string& group() const noexcept { return group_; }

 private:
  std::string group_;
};

/// Correlation or agreement statistic is undefined for the given input.
class UndefinedStatisticError : public DataError {
 public:
  using DataError::DataError;
};

class ComputationError : public DataError {
 public:
  using DataError::DataError;
};

/// A model response did not contain a usable relevance score.
class ScoreParseError : public DataError {
 public:
  using DataError::DataError;
};

class ScoreRangeError : public ScoreParseError {
 public:
  ScoreRangeError(long value, const std::string& what)
      : ScoreParseError(what), value_(value) {}
  long value() const noexcept { return value_; }

 private:
  long value_;
};

class BackendError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kBackend; }
};

/// Retries exhausted, connection failure, timeout.
class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// The service rejected the request (4xx other than 429) or the input is
/// unusable before any request is made.
class RequestError : public BackendError {
 public:
  RequestError(const std::string& what, int status = 0)
      : BackendError(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

/// Response body does not match the expected wire shape.
class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

}  // namespace autojudge
