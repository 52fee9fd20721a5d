#pragma once

#include <vector>

#include "agekf/errors.hpp"

namespace agekf {

/// Uniform age discretization: n_a bins of width delta_a covering
/// [a0, a0 + n_a * delta_a). age(j) is the left edge of bin j.
struct AgeGrid {
  double a0 = 0.0;
  double delta_a = 0.12;
  int n_a = 1000;

  double age(int j) const { return a0 + j * delta_a; }
  double upper() const { return a0 + n_a * delta_a; }

  void validate() const {
    if (!(delta_a > 0.0)) throw ConfigError("AgeGrid: delta_a must be > 0");
    if (n_a < 1) throw ConfigError("AgeGrid: n_a must be >= 1");
  }
};

/// Uniform simulation-time discretization starting at t = 0.
struct TimeGrid {
  double delta_t = 0.1;
  int n_t = 100;

  double time(int k) const { return k * delta_t; }

  void validate() const {
    if (!(delta_t > 0.0)) throw ConfigError("TimeGrid: delta_t must be > 0");
    if (n_t < 1) throw ConfigError("TimeGrid: n_t must be >= 1");
  }
};

/// Density profile over an age grid at a fixed time (people per year of age).
struct CohortDensity {
  AgeGrid grid;
  double time = 0.0;
  std::vector<double> values;
};

}  // namespace agekf
