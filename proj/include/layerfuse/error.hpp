#pragma once

#include <stdexcept>
#include <string>

namespace layerfuse {

// Error families map one-to-one onto CLI exit codes (2, 3, 4).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IncompleteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace layerfuse
