#pragma once

#include <stdexcept>
#include <string>

namespace uavrelay {

// Bad input shape: sizes that do not match the loaded map, invalid ids.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or map/traffic file contents. Maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke an operation's precondition (a bug, not bad data).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Training/runtime failure such as a non-finite loss. Maps to exit code 3.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// External scorer process/socket died or timed out. Maps to exit code 4.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace uavrelay
