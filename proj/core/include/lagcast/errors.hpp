/**
 * @file errors.hpp
 * @brief Exception hierarchy shared across the engine.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace lagcast {

/// Input data violated a documented precondition (non-finite values, bad ranges, ...).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor or field geometries are incompatible for the requested operation.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File-format and filesystem failures (bad magic, truncated payload, ...).
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Training-time invariant violations (NaN loss, frozen-parameter drift, bad stage order).
class TrainingError : public std::runtime_error {
public:
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lagcast
