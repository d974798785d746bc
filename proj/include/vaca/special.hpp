#pragma once

// Special functions backing the Gamma KL divergence and the implicit
// reparameterization of Gamma samples: log-gamma (Lanczos), digamma and
// trigamma (recurrence + asymptotic series), and the regularized lower
// incomplete gamma with its Newton inverse.

#include <cmath>
#include <limits>
#include <stdexcept>

namespace vaca {

namespace detail {
inline constexpr double kPi = 3.141592653589793238462643;
inline constexpr double kLnSqrt2Pi = 0.918938533204672741780329736406;
}  // namespace detail

// ln Gamma(x) for x > 0. Lanczos approximation (g = 7, 9 terms), reflection
// for x < 0.5.
inline double lgamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("lgamma: argument must be positive");
  static const double c[9] = {
      0.99999999999980993,      676.5203681218851,     -1259.1392167224028,
      771.32342877765313,      -176.61502916214059,    12.507343278686905,
      -0.13857109526572012,    9.9843695780195716e-6,  1.5056327351493116e-7};
  if (x < 0.5) {
    // Gamma(x) Gamma(1-x) = pi / sin(pi x)
    return std::log(detail::kPi / std::sin(detail::kPi * x)) - lgamma(1.0 - x);
  }
  const double z = x - 1.0;
  double sum = c[0];
  for (int i = 1; i < 9; ++i) sum += c[i] / (z + i);
  const double base = z + 7.5;
  return detail::kLnSqrt2Pi + (z + 0.5) * std::log(base) - base + std::log(sum);
}

// psi(x) = d/dx ln Gamma(x), x > 0. Recurrence up to x >= 12, then the
// asymptotic Bernoulli series.
inline double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: argument must be positive");
  double result = 0.0;
  while (x < 12.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double r = 1.0 / (x * x);
  result += std::log(x) - 0.5 / x;
  result -= r * (1.0 / 12.0 -
                 r * (1.0 / 120.0 -
                      r * (1.0 / 252.0 -
                           r * (1.0 / 240.0 -
                                r * (1.0 / 132.0 - r * (691.0 / 32760.0 - r / 12.0))))));
  return result;
}

// psi'(x), x > 0.
inline double trigamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("trigamma: argument must be positive");
  double result = 0.0;
  while (x < 12.0) {
    result += 1.0 / (x * x);
    x += 1.0;
  }
  const double r = 1.0 / (x * x);
  result += 1.0 / x + 0.5 * r;
  result += r / x *
            (1.0 / 6.0 -
             r * (1.0 / 30.0 -
                  r * (1.0 / 42.0 -
                       r * (1.0 / 30.0 - r * (5.0 / 66.0 - r * 691.0 / 2730.0)))));
  return result;
}

namespace detail {

// Regularized lower incomplete gamma P(a, x) by power series (x < a + 1).
inline double gamma_p_series(double a, double x) {
  double sum = 1.0 / a;
  double term = sum;
  for (int n = 1; n < 10000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - vaca::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x) by Lentz continued fraction
// (x >= a + 1).
inline double gamma_q_contfrac(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -static_cast<double>(i) * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x + a * std::log(x) - vaca::lgamma(a));
}

}  // namespace detail

// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
inline double gamma_p(double a, double x) {
  if (!(a > 0.0)) throw std::domain_error("gamma_p: shape must be positive");
  if (x < 0.0) throw std::domain_error("gamma_p: argument must be nonnegative");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return detail::gamma_p_series(a, x);
  return 1.0 - detail::gamma_q_contfrac(a, x);
}

// CDF of Gamma(alpha, rate beta) at z >= 0.
inline double gamma_cdf(double z, double alpha, double beta) {
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw std::domain_error("gamma_cdf: alpha and beta must be positive");
  if (z < 0.0) throw std::domain_error("gamma_cdf: z must be nonnegative");
  return gamma_p(alpha, beta * z);
}

// Density of Gamma(alpha, rate beta) at z > 0.
inline double gamma_pdf(double z, double alpha, double beta) {
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw std::domain_error("gamma_pdf: alpha and beta must be positive");
  if (z <= 0.0) return 0.0;
  return std::exp(alpha * std::log(beta) + (alpha - 1.0) * std::log(z) - beta * z -
                  vaca::lgamma(alpha));
}

// Quantile of Gamma(alpha, rate beta): solves gamma_cdf(z) = u by Newton with
// bisection fallback. Used to replay a recorded sample under perturbed
// parameters (frozen-quantile evaluation).
inline double gamma_quantile(double u, double alpha, double beta, double init = 0.0) {
  if (!(u > 0.0) || !(u < 1.0))
    throw std::domain_error("gamma_quantile: u must lie in (0, 1)");
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw std::domain_error("gamma_quantile: alpha and beta must be positive");
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  double z = init > 0.0 ? init : alpha / beta;
  for (int it = 0; it < 200; ++it) {
    const double f = gamma_cdf(z, alpha, beta) - u;
    if (f > 0.0) {
      hi = std::min(hi, z);
    } else {
      lo = std::max(lo, z);
    }
    const double pdf = gamma_pdf(z, alpha, beta);
    double step_to;
    if (pdf > 0.0) {
      step_to = z - f / pdf;
    } else {
      step_to = -1.0;  // force bisection
    }
    if (!(step_to > lo) || !(step_to < hi)) {
      step_to = std::isinf(hi) ? (lo > 0.0 ? 2.0 * std::max(lo, z) : 1.0 / beta)
                               : 0.5 * (lo + hi);
    }
    if (std::fabs(step_to - z) <= 1e-15 * std::max(1.0, std::fabs(z)) && it > 2) {
      z = step_to;
      break;
    }
    z = step_to;
  }
  return z;
}

}  // namespace vaca
