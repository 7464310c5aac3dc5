#pragma once

#include <stdexcept>
#include <string>

namespace hingeforest {

// Invalid configuration: bad shapes, bad hyperparameters, malformed graphs.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (files, labels).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation invoked in the wrong lifecycle state (e.g. backward before forward).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A non-finite value was produced during a forward or backward pass.
class NumericFault : public std::runtime_error {
 public:
  NumericFault(std::string node, const std::string& what)
      : std::runtime_error(what), node_(std::move(node)) {}

  const std::string& node() const noexcept { return node_; }

 private:
  std::string node_;
};

}  // namespace hingeforest
