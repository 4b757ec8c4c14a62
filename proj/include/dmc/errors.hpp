#pragma once

#include <stdexcept>
#include <string>

namespace dmc {

//! Requested derivative order exceeds what a field or scheme map supports.
class CapabilityError : public std::runtime_error {
 public:
  CapabilityError(int required, int available, const std::string& what_for)
      : std::runtime_error("derivative order " + std::to_string(required) +
                           " required for " + what_for + " but only order " +
                           std::to_string(available) + " is available"),
        required_(required),
        available_(available) {}
  int required() const { return required_; }
  int available() const { return available_; }

 private:
  int required_;
  int available_;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SimulationError : public std::runtime_error {
 public:
  SimulationError(const std::string& msg, double grid_time)
      : std::runtime_error(msg + " at grid time " + std::to_string(grid_time)),
        grid_time_(grid_time) {}
  double grid_time() const { return grid_time_; }

 private:
  double grid_time_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

//! Raised when a run would exceed a declared resource cap (e.g. the
//! second-derivative tensor size).
class ResourceCapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EstimatorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CertificateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dmc
