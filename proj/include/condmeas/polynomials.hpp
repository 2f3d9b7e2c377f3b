#pragma once

// Polynomial families used by Hermite-Gauss detector modes: Laguerre
// polynomials (and their derivatives), normalized Hermite functions and the
// two-index D^m_n family that appears for mode superpositions.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "condmeas/errors.hpp"

namespace condmeas::poly {

/// Generalized Laguerre polynomial L^(alpha)_m(x) by forward recurrence.
inline double generalized_laguerre(int m, double alpha, double x) {
  if (m < 0) throw ValidationError("laguerre: order must be non-negative");
  double prev = 1.0;
  if (m == 0) return prev;
  double cur = 1.0 + alpha - x;
  for (int k = 1; k < m; ++k) {
    const double next = ((2.0 * k + 1.0 + alpha - x) * cur - (k + alpha) * prev) / (k + 1.0);
    prev = cur;
    cur = next;
  }
  return cur;
}

inline double laguerre(int m, double x) { return generalized_laguerre(m, 0.0, x); }

/// L'_m(x) = -L^(1)_{m-1}(x).
inline double laguerre_prime(int m, double x) {
  if (m < 0) throw ValidationError("laguerre_prime: order must be non-negative");
  return m == 0 ? 0.0 : -generalized_laguerre(m - 1, 1.0, x);
}

/// Exact rational coefficient, used to compare recurrence output with tabulated polynomials.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational make(std::int64_t n, std::int64_t d) {
    if (d == 0) throw DomainError("rational with zero denominator");
    if (d < 0) { n = -n; d = -d; }
    const std::int64_t g = std::gcd(n < 0 ? -n : n, d);
    return g == 0 ? Rational{0, 1} : Rational{n / g, d / g};
  }
  friend Rational operator+(Rational a, Rational b) { return make(a.num * b.den + b.num * a.den, a.den * b.den); }
  friend Rational operator-(Rational a, Rational b) { return make(a.num * b.den - b.num * a.den, a.den * b.den); }
  friend Rational operator*(Rational a, Rational b) { return make(a.num * b.num, a.den * b.den); }
  friend bool operator==(const Rational&, const Rational&) = default;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// Power-series coefficients of L_m(x), lowest order first, from the same
/// three-term recurrence as laguerre() but in exact arithmetic.
inline std::vector<Rational> laguerre_coefficients(int m) {
  if (m < 0) throw ValidationError("laguerre_coefficients: order must be non-negative");
  std::vector<Rational> prev{Rational{1, 1}};
  if (m == 0) return prev;
  std::vector<Rational> cur{Rational{1, 1}, Rational{-1, 1}};
  for (int k = 1; k < m; ++k) {
    std::vector<Rational> next(cur.size() + 1, Rational{0, 1});
    for (std::size_t i = 0; i < cur.size(); ++i) {
      next[i] = next[i] + Rational::make(2 * k + 1, 1) * cur[i];
      next[i + 1] = next[i + 1] - cur[i];
    }
    for (std::size_t i = 0; i < prev.size(); ++i) next[i] = next[i] - Rational::make(k, 1) * prev[i];
    for (auto& c : next) c = c * Rational::make(1, k + 1);
    prev = std::move(cur);
    cur = std::move(next);
  }
  return cur;
}

/// Derivative coefficients of a power series.
inline std::vector<Rational> derivative(const std::vector<Rational>& c) {
  if (c.size() <= 1) return {Rational{0, 1}};
  std::vector<Rational> out;
  for (std::size_t i = 1; i < c.size(); ++i) out.push_back(c[i] * Rational::make(static_cast<std::int64_t>(i), 1));
  return out;
}

inline double log_factorial(int n) { return std::lgamma(static_cast<double>(n) + 1.0); }

/// m! n! (-1)^(m-k) / ((m-k)! (n-k)! k!) computed as C(m,k) * n!/(n-k)!.
inline double dmn_coefficient(int m, int n, int k) {
  double c = 1.0;
  for (int i = 0; i < k; ++i) c *= static_cast<double>(m - i) / static_cast<double>(i + 1);
  for (int i = 0; i < k; ++i) c *= static_cast<double>(n - i);
  return ((m - k) % 2 == 0) ? c : -c;
}

/// D^m_n(x) = sum_k m! n! (-1)^(m-k) x^(m+n-2k) / ((m-k)! (n-k)! k!).
template <typename T>
T dmn_polynomial(int m, int n, T x) {
  if (m < 0 || n < 0) throw ValidationError("dmn_polynomial: indices must be non-negative");
  T sum{0};
  const int kmax = std::min(m, n);
  for (int k = 0; k <= kmax; ++k) {
    T term{dmn_coefficient(m, n, k)};
    for (int p = 0; p < m + n - 2 * k; ++p) term *= x;
    sum += term;
  }
  return sum;
}

/// d/dx D^m_n(x).
template <typename T>
T dmn_polynomial_prime(int m, int n, T x) {
  if (m < 0 || n < 0) throw ValidationError("dmn_polynomial_prime: indices must be non-negative");
  T sum{0};
  const int kmax = std::min(m, n);
  for (int k = 0; k <= kmax; ++k) {
    const int power = m + n - 2 * k;
    if (power == 0) continue;
    T term{dmn_coefficient(m, n, k) * power};
    for (int p = 0; p < power - 1; ++p) term *= x;
    sum += term;
  }
  return sum;
}

/// Normalized Hermite functions pi^(-1/4) (2^m m!)^(-1/2) H_m(u) e^(-u^2/2)
/// for m = 0..max_order, by the stable normalized recurrence.
inline std::vector<double> hermite_functions(int max_order, double u) {
  if (max_order < 0) throw ValidationError("hermite_functions: order must be non-negative");
  std::vector<double> h(static_cast<std::size_t>(max_order) + 1);
  h[0] = std::pow(M_PI, -0.25) * std::exp(-0.5 * u * u);
  if (max_order >= 1) h[1] = std::sqrt(2.0) * u * h[0];
  for (int k = 1; k < max_order; ++k)
    h[k + 1] = std::sqrt(2.0 / (k + 1.0)) * u * h[k] - std::sqrt(static_cast<double>(k) / (k + 1.0)) * h[k - 1];
  return h;
}

}  // namespace condmeas::poly
