#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "agekf/errors.hpp"

namespace agekf {

/// Composite Simpson rule with a fixed number of panels (rounded up to even).
template <typename F>
double simpson(F&& f, double lo, double hi, int panels) {
  if (hi == lo) return 0.0;
  if (panels < 2) panels = 2;
  if (panels % 2 != 0) ++panels;
  const double h = (hi - lo) / panels;
  double odd = 0.0, even = 0.0;
  for (int i = 1; i < panels; i += 2) odd += f(lo + i * h);
  for (int i = 2; i < panels; i += 2) even += f(lo + i * h);
  return (h / 3.0) * (f(lo) + f(hi) + 4.0 * odd + 2.0 * even);
}

/// Composite Simpson, doubling the panel count until two successive
/// estimates agree to `rel_tol` (relative to the larger magnitude).
/// Deterministic: no adaptive subdivision state.
template <typename F>
double simpson_refining(F&& f, double lo, double hi, double rel_tol = 1e-9,
                        int initial_panels = 256, int max_doublings = 14) {
  if (hi == lo) return 0.0;
  int panels = initial_panels;
  double previous = simpson(f, lo, hi, panels);
  for (int i = 0; i < max_doublings; ++i) {
    panels *= 2;
    const double current = simpson(f, lo, hi, panels);
    const double scale = std::max({std::fabs(current), std::fabs(previous), 1e-300});
    if (std::fabs(current - previous) <= rel_tol * scale) return current;
    previous = current;
  }
  throw NumericalError("simpson_refining: no convergence on [" + std::to_string(lo) +
                       ", " + std::to_string(hi) + "] after " +
                       std::to_string(max_doublings) + " doublings");
}

/// Cumulative integral of uniformly sampled values g[0..n] with spacing h:
/// out[i] = integral of the underlying function from x0 to x0 + i*h.
/// Per interval, integrates the quadratic through three neighbouring samples
/// (cumulative Simpson), alternating the stencil so errors largely cancel.
inline std::vector<double> cumulative_simpson(const std::vector<double>& g, double h) {
  const std::size_t n = g.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  if (n == 2) {
    out[1] = 0.5 * h * (g[0] + g[1]);
    return out;
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    double inc;
    if (i == 0 || (i % 2 == 0 && i + 2 < n)) {
      // forward stencil (i, i+1, i+2) integrated over [i, i+1]
      inc = h / 12.0 * (5.0 * g[i] + 8.0 * g[i + 1] - g[i + 2]);
    } else {
      // backward stencil (i-1, i, i+1) integrated over [i, i+1]
      inc = h / 12.0 * (-g[i - 1] + 8.0 * g[i] + 5.0 * g[i + 1]);
    }
    out[i + 1] = out[i] + inc;
  }
  return out;
}

/// Cubic Hermite evaluation of a cumulative table Phi (with derivative table
/// g = Phi') at an off-node point x. Nodes are x0 + i*h, i in [0, Phi.size()).
inline double hermite_lookup(const std::vector<double>& phi, const std::vector<double>& g,
                             double x0, double h, double x) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(phi.size());
  double u = (x - x0) / h;
  std::ptrdiff_t i = static_cast<std::ptrdiff_t>(std::floor(u));
  if (i < 0) i = 0;
  if (i > n - 2) i = n - 2;
  const double s = u - static_cast<double>(i);
  const double s2 = s * s, s3 = s2 * s;
  return phi[i] * (2.0 * s3 - 3.0 * s2 + 1.0) + h * g[i] * (s3 - 2.0 * s2 + s) +
         phi[i + 1] * (-2.0 * s3 + 3.0 * s2) + h * g[i + 1] * (s3 - s2);
}

}  // namespace agekf
