#pragma once

namespace agekf {

/// Gamma density f(a; alpha, beta) = beta^alpha a^(alpha-1) e^(-beta a) / Gamma(alpha).
/// Normalized over [0, inf); mean alpha/beta. Requires a >= 0, alpha > 0, beta > 0.
double gamma_pdf(double a, double alpha, double beta);

/// d/da of gamma_pdf. At a = 0 the one-sided limit is returned (0 for
/// alpha > 2, beta^2 for alpha = 2, +inf below).
double gamma_pdf_deriv(double a, double alpha, double beta);

/// Regularized lower incomplete gamma P(s, x) = gamma(s, x) / Gamma(s).
double regularized_gamma_p(double s, double x);

/// Regularized upper incomplete gamma Q(s, x) = Gamma(s, x) / Gamma(s).
/// Series expansion for x < s + 1, continued fraction otherwise.
double regularized_gamma_q(double s, double x);

/// Upper incomplete gamma Gamma(s, x) = integral_x^inf t^(s-1) e^(-t) dt.
/// Gamma(s, 0) = Gamma(s); strictly decreasing in x.
double upper_incomplete_gamma(double s, double x);

}  // namespace agekf
