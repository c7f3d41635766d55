#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace latentscout {

/// Base of every error raised by the library. `kind()` is a stable,
/// machine-readable tag used by the CLI and HTTP layers.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Invalid user configuration (bad palette length, out-of-range probability, unknown key).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

/// A precondition of an operation was violated (shape mismatch, empty input, bad index).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("contract", what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error("parse", what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class IngestionError : public Error {
 public:
  explicit IngestionError(const std::string& what) : Error("ingestion", what) {}
};

class StratificationError : public Error {
 public:
  explicit StratificationError(const std::string& what) : Error("stratification", what) {}
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch)
      : Error("training", what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Operation not allowed in the current lifecycle state (stage ordering, run status).
class StateError : public Error {
 public:
  explicit StateError(const std::string& what) : Error("state", what) {}
};

class NotFoundError : public Error {
 public:
  explicit NotFoundError(const std::string& what) : Error("not_found", what) {}
};

class AssemblyError : public Error {
 public:
  explicit AssemblyError(const std::string& what) : Error("assembly", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

}  // namespace latentscout
