#pragma once

#include <stdexcept>
#include <string>

namespace omreid {

// Error taxonomy mirrored by the CLI exit codes: config 2, data 3, numeric 4.
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

class data_error : public std::runtime_error {
 public:
  explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// Shape / dimension violations in tensor ops.
class dim_error : public numeric_error {
 public:
  explicit dim_error(const std::string& what) : numeric_error(what) {}
};

}  // namespace omreid
