#pragma once

// Independent reference computations for the test suites. Nothing here calls
// into the library's closed forms.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

inline double ell(double a) {
  if (a < 0.0) return std::numeric_limits<double>::infinity();
  if (a == 0.0) return 1.0;
  return a * std::log(a) - a + 1.0;
}

/// lambda * ell(q / lambda), with the lambda = 0 limit.
inline double scaled_ell(double q, double lambda) {
  if (q < 0.0) return std::numeric_limits<double>::infinity();
  if (lambda <= 0.0) return q == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  if (q == 0.0) return lambda;
  return q * std::log(q / lambda) - q + lambda;
}

/// Golden-section minimization of a unimodal function on [lo, hi].
inline double golden_section_min(const std::function<double(double)>& f, double lo, double hi,
                                 double* argmin = nullptr, int iters = 300) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int k = 0; k < iters && b - a > 1e-15 * (1.0 + std::abs(a) + std::abs(b)); ++k) {
    if (fc < fd) {
      b = d; d = c; fd = fc;
      c = b - g * (b - a); fc = f(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + g * (b - a); fd = f(d);
    }
  }
  const double x = 0.5 * (a + b);
  if (argmin) *argmin = x;
  return std::min({f(x), fc, fd});
}

/// SIS Lagrangian as a one-dimensional infimum over the downward flux a:
///   inf_{a >= max(0, -sdot)} lambda ell(a / lambda) + c ell((a + sdot) / c), c = alpha (1 - s).
inline double sis_lagrangian(double sdot, double s, double lambda, double alpha,
                             double* argmin = nullptr) {
  const double c = alpha * (1.0 - s);
  auto f = [&](double a) { return scaled_ell(a, lambda) + scaled_ell(a + sdot, c); };
  const double lo = std::max(0.0, -sdot);
  const double hi = lo + 10.0 * (1.0 + std::abs(sdot) + lambda + c);
  return golden_section_min(f, lo, hi, argmin);
}

/// Central difference.
inline double diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double diff2(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
}

/// log P(X >= k), X ~ Poisson(mean), by long-double recursion outward from k.
inline double poisson_log_tail(double mean, long long k) {
  long double log_pk = -static_cast<long double>(mean) + k * std::log(static_cast<long double>(mean)) -
                       std::lgamma(static_cast<long double>(k) + 1.0L);
  long double term = 1.0L, sum = 1.0L;
  for (long long j = k + 1; term > 1e-22L * sum; ++j) {
    term *= static_cast<long double>(mean) / static_cast<long double>(j);
    sum += term;
  }
  return static_cast<double>(log_pk + std::log(sum));
}

/// Three-state contracted minimum by zoomed grid search over the cycle space.
///
/// Fluxes q_{ab} = particular + cycle combination: three two-cycles (a<->b)
/// and the three-cycle 0->1->2->0. The particular solution routes r_1 and r_2
/// through state 0. Returns +infinity if no feasible grid point is found.
inline double contracted_three_state(const std::array<double, 3>& r,
                                     const std::array<std::array<double, 3>, 3>& lambda,
                                     int rounds = 60) {
  std::array<std::array<double, 3>, 3> base{};
  base[0][1] = std::max(r[1], 0.0);
  base[1][0] = std::max(-r[1], 0.0);
  base[0][2] = std::max(r[2], 0.0);
  base[2][0] = std::max(-r[2], 0.0);
  auto cost = [&](const std::array<double, 4>& c) {
    std::array<std::array<double, 3>, 3> q = base;
    q[0][1] += c[0] + c[3];
    q[1][0] += c[0];
    q[0][2] += c[1];
    q[2][0] += c[1] + c[3];
    q[1][2] += c[2] + c[3];
    q[2][1] += c[2];
    double total = 0.0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        if (a == b) continue;
        const double v = scaled_ell(q[a][b], lambda[a][b]);
        if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
        total += v;
      }
    return total;
  };
  double scale = 1.0;
  for (const auto& row : lambda)
    for (double l : row) scale = std::max(scale, l);
  for (double x : r) scale = std::max(scale, std::abs(x));
  std::array<double, 4> center{}, best{};
  double half = 4.0 * scale;
  double best_val = std::numeric_limits<double>::infinity();
  const int n = 11;
  for (int round = 0; round < rounds; ++round) {
    const double h = 2.0 * half / (n - 1);
    std::array<double, 4> c{};
    for (int i0 = 0; i0 < n; ++i0)
      for (int i1 = 0; i1 < n; ++i1)
        for (int i2 = 0; i2 < n; ++i2)
          for (int i3 = 0; i3 < n; ++i3) {
            c = {center[0] - half + i0 * h, center[1] - half + i1 * h,
                 center[2] - half + i2 * h, center[3] - half + i3 * h};
            const double v = cost(c);
            if (v < best_val) {
              best_val = v;
              best = c;
            }
          }
    center = best;
    half = std::max(2.0 * h, 1e-14);
  }
  return best_val;
}

/// Richardson estimate of the discretization error of a second-order quantity
/// from values at spacing h and h/2: (4/3)(R_h - R_{h/2}).
inline double richardson_error(double coarse, double fine) { return 4.0 / 3.0 * (coarse - fine); }

}  // namespace oracle
