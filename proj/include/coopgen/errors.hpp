// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy. Every library failure derives from coopgen::Error; the
// CLI maps the three top-level categories onto process exit codes.

#pragma once

#include <stdexcept>
#include <string>

namespace coopgen {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data or arguments (CLI exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

// Failures while running models, training or searching (CLI exit code 3).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

class ParameterError : public DataError {
 public:
  using DataError::DataError;
};

class IndexError : public DataError {
 public:
  using DataError::DataError;
};

class IngestionError : public DataError {
 public:
  using DataError::DataError;
};

class EncodingError : public DataError {
 public:
  EncodingError(const std::string& what, char32_t character, std::size_t offset)
      : DataError(what), character_(character), offset_(offset) {}
  char32_t character() const { return character_; }
  std::size_t offset() const { return offset_; }

 private:
  char32_t character_;
  std::size_t offset_;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line) : DataError(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

class ConfigurationError : public DataError {
 public:
  using DataError::DataError;
};

/// A statistical test whose statistic is undefined for the given data.
class UndefinedTestError : public DataError {
 public:
  using DataError::DataError;
};

class CapacityError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class ModeError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class StateError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class TrainingError : public RuntimeFailure {
 public:
  TrainingError(const std::string& what, std::size_t epoch, std::size_t step)
      : RuntimeFailure(what), epoch_(epoch), step_(step) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }

 private:
  std::size_t epoch_;
  std::size_t step_;
};

class IoError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

enum class CheckpointFailure { bad_magic, version, truncated, checksum };

class CheckpointError : public DataError {
 public:
  CheckpointError(const std::string& what, CheckpointFailure kind) : DataError(what), kind_(kind) {}
  CheckpointFailure kind() const { return kind_; }

 private:
  CheckpointFailure kind_;
};

}  // namespace coopgen
