#pragma once

#include <stdexcept>
#include <string>

namespace ivfr {

// Input/validation problems (bad grids, malformed CSV, invalid config).
// The CLI maps these to exit code 2.
class validation_error : public std::runtime_error {
public:
  explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures (singular instrument matrix, rank deficiency).
// The CLI maps these to exit code 3.
class numeric_error : public std::runtime_error {
public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ivfr
