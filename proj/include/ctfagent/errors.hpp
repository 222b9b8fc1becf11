#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

namespace ctfagent {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Vector length mismatch between a query and a store, or between two vectors.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class IndexingError : public Error {
 public:
  IndexingError(std::string trunk_id, const std::string& what)
      : Error("indexing trunk '" + trunk_id + "': " + what), trunk_id_(std::move(trunk_id)) {}
  const std::string& trunk_id() const noexcept { return trunk_id_; }

 private:
  std::string trunk_id_;
};

// Malformed input file. line() is 1-based; 0 means the whole file.
class LoadError : public Error {
 public:
  LoadError(const std::filesystem::path& path, std::size_t line, const std::string& what)
      : Error(path.string() + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SessionError : public Error {
 public:
  using Error::Error;
};

// Raised by start_nc_session when the service cannot be reached.
class ConnectError : public SessionError {
 public:
  using SessionError::SessionError;
};

// Sandbox missing, service launch failed, or another setup-level problem.
class EnvironmentError : public Error {
 public:
  using Error::Error;
};

class DecompileError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

// Retryable provider failure (network, 5xx, rate limit).
class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

// Never retried; terminal for a solve.
class ContextExceeded : public BackendError {
 public:
  using BackendError::BackendError;
};

class ExtractionError : public Error {
 public:
  using Error::Error;
};

class JudgingError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class GradingError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctfagent
