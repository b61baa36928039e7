#pragma once

#include <stdexcept>
#include <string>

namespace advgen {

/// Base class for all library errors.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape or size mismatch between tensors.
class DimensionError : public Error {
  public:
    using Error::Error;
};

/// Invalid configuration value (bounds, intervals, kernel sizes, ...).
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Misuse of the recorded computation graph.
class GraphError : public Error {
  public:
    using Error::Error;
};

/// A direction vector with (near-)zero norm where a direction is required.
class DegenerateDirectionError : public Error {
  public:
    using Error::Error;
};

/// Condition set does not match the model's schema or domain constraints.
class ConditionError : public Error {
  public:
    using Error::Error;
};

/// Malformed image file or unsupported encoding.
class FormatError : public Error {
  public:
    using Error::Error;
};

/// Filesystem failure (missing file, unreadable, unwritable).
class IoError : public Error {
  public:
    using Error::Error;
};

/// Non-finite value encountered during an attack run.
class NumericError : public Error {
  public:
    using Error::Error;
};

}  // namespace advgen
