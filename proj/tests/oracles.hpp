#pragma once

// Test-only oracles. These deliberately use different algorithms than the
// library (recursive adaptive Simpson vs fixed-panel refinement, exact scalar
// Kalman recursion vs ensemble approximation) so that agreement is evidence,
// not tautology.

#include <cmath>
#include <functional>
#include <stdexcept>

namespace oracle {

namespace detail {

template <typename F>
double adaptive_simpson_impl(F&& f, double a, double b, double fa, double fm, double fb,
                             double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0) throw std::runtime_error("oracle quadrature: max depth reached");
  if (std::fabs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  // Tolerance is not halved: halving drives the target below the roundoff
  // floor for large-amplitude integrands.
  return adaptive_simpson_impl(f, a, m, fa, flm, fm, left, tol, depth - 1) +
         adaptive_simpson_impl(f, m, b, fm, frm, fb, right, tol, depth - 1);
}

}  // namespace detail

/// Recursive adaptive Simpson quadrature with Richardson correction.
/// `tol` is interpreted relative to the first whole-interval estimate.
template <typename F>
double adaptive_simpson(F&& f, double a, double b, double tol = 1e-12, int max_depth = 60) {
  if (a == b) return 0.0;
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  const double scaled_tol = tol * std::max(1.0, std::fabs(whole));
  return detail::adaptive_simpson_impl(f, a, b, fa, fm, fb, whole, scaled_tol, max_depth);
}

/// Integrate over n_panels uniform pre-panels, each adaptively. The
/// pre-split guarantees narrow peaks are sampled before the convergence
/// check can fire.
template <typename F>
double adaptive_simpson_panels(F&& f, double a, double b, int n_panels, double tol = 1e-12) {
  double total = 0.0;
  const double h = (b - a) / n_panels;
  for (int i = 0; i < n_panels; ++i) {
    total += adaptive_simpson(f, a + i * h, a + (i + 1) * h, tol);
  }
  return total;
}

/// Upper incomplete gamma by direct quadrature of the defining integral.
/// The integrand decays like e^(-t), so truncating at max(x, s) + 250 leaves
/// a tail far below double precision for the shapes used in tests.
inline double upper_incomplete_gamma(double s, double x) {
  const double upper = std::max(x, s) + 250.0;
  auto integrand = [s](double t) { return std::exp((s - 1.0) * std::log(t) - t); };
  const double lo = (x == 0.0) ? 1e-300 : x;  // integrable endpoint for s < 1
  return adaptive_simpson_panels(integrand, lo, upper, 64, 1e-13);
}

/// Exact discrete-time scalar Kalman filter for
///   x_{k+1} = A x_k + w,  w ~ N(0, Q),   z_k = x_k + v,  v ~ N(0, R).
struct ScalarKalman {
  double mean;
  double var;

  void predict(double a_coef, double q) {
    mean = a_coef * mean;
    var = a_coef * a_coef * var + q;
  }
  void update(double z, double r) {
    const double gain = var / (var + r);
    mean += gain * (z - mean);
    var *= (1.0 - gain);
  }
};

/// Central finite difference d/dt with step h.
template <typename F>
double central_diff(F&& f, double t, double h) {
  return (f(t + h) - f(t - h)) / (2.0 * h);
}

}  // namespace oracle
