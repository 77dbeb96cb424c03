#pragma once

#include <stdexcept>
#include <string>

namespace das {

// Bad shapes, invalid flags, malformed graph wiring. Maps to CLI exit 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation invoked out of order (e.g. backward before forward).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int node_id)
      : std::runtime_error(what), node_id_(node_id) {}
  int node_id() const noexcept { return node_id_; }

 private:
  int node_id_;
};

// Malformed input data or file contents. Maps to CLI exit 2.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorruptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ScoringUnsupported : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UndefinedCorrelation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace das
