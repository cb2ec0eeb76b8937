#pragma once

#include <stdexcept>
#include <string>

namespace remap {

/// Inconsistent construction parameters (shapes, architecture combinations).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller handed in data that violates an operation's precondition.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Optimization produced or consumed non-finite values.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The environment broke its reward contract.
class EnvironmentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file could not be read or written; the message names the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace remap
