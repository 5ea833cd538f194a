#pragma once

#include <stdexcept>
#include <string>

namespace fognite {

// Invalid configuration value or combination (bad shapes, empty series, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller handed in data that violates an operation's precondition.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor / vector dimensions do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Federated exchange violated (mismatched manifests, bad blob).
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse, e.g. backward() without a cached train-mode forward().
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace fognite
