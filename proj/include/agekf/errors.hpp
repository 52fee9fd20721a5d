#pragma once

#include <stdexcept>
#include <string>

namespace agekf {

/// Invalid or inconsistent run configuration (bad grid, bad matrix, unknown key).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input data (observation exports, population series).
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure (quadrature non-convergence, singular innovation
/// covariance, non-finite state propagation).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace exit_code {
inline constexpr int success = 0;
inline constexpr int failure = 1;
inline constexpr int config = 2;
inline constexpr int parse = 3;
inline constexpr int numerical = 4;
}  // namespace exit_code

}  // namespace agekf
