#pragma once

#include <functional>
#include <vector>

#include "agekf/grids.hpp"

namespace agekf::agestruct {

/// Parameters of the analytically solvable model: constant death rate mu and
/// influx p(a) = a e^(-lambda a).
struct SimpleModelParams {
  double mu = 0.08;      // 1/year
  double lambda = 0.2;   // 1/year

  void validate() const {
    if (!(mu > 0.0)) throw ConfigError("SimpleModelParams: mu must be > 0");
    if (!(lambda > 0.0)) throw ConfigError("SimpleModelParams: lambda must be > 0");
  }
};

/// Initial age profile rho(a) at t = 0. The age-zero boundary is identically
/// zero (no population enters at age 0), which is the only boundary the
/// model supports.
struct BoundaryData {
  std::function<double(double)> rho;
  bool g_zero = true;
};

/// Age- and time-dependent rate field, e.g. mu(a, t) or p(a, t).
using RateField = std::function<double(double age, double time)>;

/// Influx p(a) = a e^(-lambda a); maximized at a = 1/lambda.
double influx_simple(double a, double lambda);

/// Density n(a, t) of the constant-rate model with rho = 0. Evaluates the
/// a >= t and a < t characteristic branches; both are continuous at a = t.
/// Near lambda = mu the (lambda - mu)^-2 prefactor is replaced by the
/// analytic limit.
double solve_simple(const SimpleModelParams& params, double a, double t);

/// Long-time limit n(a, t -> inf): the time-independent part of the a < t
/// branch.
double steady_state(double a, const SimpleModelParams& params);

/// Stationary age of the a >= t branch,
/// a_max(t) = t / (1 - e^(-(lambda-mu) t)) - mu / (lambda (lambda-mu)).
/// Requires lambda > mu; strictly increasing in t. The stationary point is
/// the branch maximum (and exceeds t) only while a_max(t) >= t; at later
/// times the branch maximum sits on the boundary a = t.
double peak_age(double t, const SimpleModelParams& params);

/// Closed-form time derivative of solve_simple:
/// (a - t) e^(-lambda (a-t) - mu t) for a >= t, zero otherwise.
double simple_rate_of_change(double a, double t, const SimpleModelParams& params);

/// General characteristic solution of
///   (d/da + d/dt) n = -mu(a,t) n + p(a,t),  n(a,0) = rho(a),  n(0,t) = 0,
/// with nested numerical quadrature along characteristics. Throws
/// NumericalError with (a, t) context if the quadrature fails to converge.
double solve_general(const BoundaryData& boundary, const RateField& mu_fn,
                     const RateField& p_fn, double a, double t,
                     double rel_tol = 1e-9);

/// First-order explicit upwind discretization of the transport model; the
/// reference oracle for the analytic solutions. Requires delta_t <= delta_a
/// (CFL). Records the initial profile and every record_stride-th step plus
/// the final one.
std::vector<CohortDensity> upwind_reference(const BoundaryData& boundary,
                                            const RateField& mu_fn, const RateField& p_fn,
                                            const AgeGrid& age_grid, const TimeGrid& time_grid,
                                            int record_stride = 1);

}  // namespace agekf::agestruct
