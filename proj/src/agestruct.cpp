#include "agekf/agestruct.hpp"

#include <cmath>
#include <string>

#include "agekf/quadrature.hpp"

namespace agekf::agestruct {

namespace {

// Prefactor degeneracy threshold. The raw formulas compute a bracket of
// size ~(d a)^2 by cancellation, so their relative error grows like
// eps / (d a)^2; the series limit below loses accuracy like (d a)^3. With
// ages up to ~120 the crossover sits near |d| = 1e-5, where both sides are
// accurate to ~1e-9.
constexpr double kDegenerate = 1e-5;

}  // namespace

double influx_simple(double a, double lambda) {
  if (a < 0.0) throw std::domain_error("influx_simple: age must be >= 0");
  if (!(lambda > 0.0)) throw std::domain_error("influx_simple: lambda must be > 0");
  return a * std::exp(-lambda * a);
}

double solve_simple(const SimpleModelParams& params, double a, double t) {
  params.validate();
  if (a < 0.0 || t < 0.0) throw std::domain_error("solve_simple: a and t must be >= 0");
  const double mu = params.mu;
  const double lambda = params.lambda;
  const double d = lambda - mu;

  if (a >= t) {
    if (std::fabs(d) < kDegenerate) {
      // lambda -> mu limit of the a >= t branch with corrections through d^2.
      const double poly = t * (a - 0.5 * t) - d * t * t * (0.5 * a - t / 6.0) +
                          d * d * t * t * t * (a / 6.0 - t / 24.0);
      return std::exp(-lambda * (a - t) - mu * t) * poly;
    }
    const double bracket = std::exp(-mu * t) * (1.0 + (a - t) * d) -
                           (1.0 + a * d) * std::exp(-lambda * t);
    return std::exp(-lambda * (a - t)) / (d * d) * bracket;
  }
  return steady_state(a, params);
}

double steady_state(double a, const SimpleModelParams& params) {
  params.validate();
  if (a < 0.0) throw std::domain_error("steady_state: age must be >= 0");
  const double mu = params.mu;
  const double lambda = params.lambda;
  const double d = lambda - mu;
  if (std::fabs(d) < kDegenerate) {
    return std::exp(-mu * a) * (0.5 * a * a - d * a * a * a / 3.0 + d * d * a * a * a * a / 8.0);
  }
  return (std::exp(-mu * a) - (1.0 + a * d) * std::exp(-lambda * a)) / (d * d);
}

double peak_age(double t, const SimpleModelParams& params) {
  params.validate();
  if (!(t > 0.0)) throw std::domain_error("peak_age: t must be > 0");
  if (!(params.lambda > params.mu)) {
    throw std::domain_error("peak_age: requires lambda > mu");
  }
  const double d = params.lambda - params.mu;
  return t / (-std::expm1(-d * t)) - params.mu / (params.lambda * d);
}

double simple_rate_of_change(double a, double t, const SimpleModelParams& params) {
  params.validate();
  if (a < 0.0 || t < 0.0) {
    throw std::domain_error("simple_rate_of_change: a and t must be >= 0");
  }
  if (a < t) return 0.0;
  return (a - t) * std::exp(-params.lambda * (a - t) - params.mu * t);
}

double solve_general(const BoundaryData& boundary, const RateField& mu_fn,
                     const RateField& p_fn, double a, double t, double rel_tol) {
  if (a < 0.0 || t < 0.0) throw std::domain_error("solve_general: a and t must be >= 0");
  const double inner_tol = 0.1 * rel_tol;
  try {
    if (a >= t) {
      // Characteristic starts on the initial profile at age a - t.
      const double decay =
          simpson_refining([&](double s) { return mu_fn(a - t + s, s); }, 0.0, t, inner_tol);
      double value = boundary.rho ? boundary.rho(a - t) * std::exp(-decay) : 0.0;
      value += simpson_refining(
          [&](double s) {
            const double exponent = simpson_refining(
                [&](double sp) { return mu_fn(a - t + sp, sp); }, s, t, inner_tol);
            return p_fn(s + a - t, s) * std::exp(-exponent);
          },
          0.0, t, rel_tol);
      return value;
    }
    // Characteristic starts on the (zero) age-0 boundary at time t - a.
    return simpson_refining(
        [&](double s) {
          const double exponent = simpson_refining(
              [&](double sp) { return mu_fn(sp, sp + t - a); }, s, a, inner_tol);
          return p_fn(s, s + t - a) * std::exp(-exponent);
        },
        0.0, a, rel_tol);
  } catch (const NumericalError& err) {
    throw NumericalError("solve_general(a=" + std::to_string(a) + ", t=" +
                         std::to_string(t) + "): " + err.what());
  }
}

std::vector<CohortDensity> upwind_reference(const BoundaryData& boundary,
                                            const RateField& mu_fn, const RateField& p_fn,
                                            const AgeGrid& age_grid, const TimeGrid& time_grid,
                                            int record_stride) {
  age_grid.validate();
  time_grid.validate();
  if (time_grid.delta_t > age_grid.delta_a * (1.0 + 1e-12)) {
    throw ConfigError("upwind_reference: CFL requires delta_t <= delta_a");
  }
  if (record_stride < 1) record_stride = 1;

  const int n_a = age_grid.n_a;
  const double courant = time_grid.delta_t / age_grid.delta_a;
  std::vector<double> current(n_a), next(n_a);
  for (int j = 0; j < n_a; ++j) {
    current[j] = boundary.rho ? boundary.rho(age_grid.age(j)) : 0.0;
  }

  std::vector<CohortDensity> out;
  out.push_back({age_grid, 0.0, current});
  for (int k = 0; k < time_grid.n_t; ++k) {
    const double t = time_grid.time(k);
    for (int j = 0; j < n_a; ++j) {
      const double aj = age_grid.age(j);
      const double upstream = (j == 0) ? 0.0 : current[j - 1];  // age-0 boundary is zero
      next[j] = current[j] - courant * (current[j] - upstream) +
                time_grid.delta_t * (p_fn(aj, t) - mu_fn(aj, t) * current[j]);
    }
    current.swap(next);
    if ((k + 1) % record_stride == 0 || k + 1 == time_grid.n_t) {
      out.push_back({age_grid, time_grid.time(k + 1), current});
    }
  }
  return out;
}

}  // namespace agekf::agestruct
