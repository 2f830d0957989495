#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

namespace gldp {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Floor applied to intensities inside logarithms.
inline constexpr double kDensityFloor = 1e-8;

/// Invalid user input: bad parameters, malformed presets, unreadable files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure: non-finite rates, normalization drift, non-convergence.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A nonnegative cost that may be +infinity.
///
/// The infinite state is an explicit flag rather than an IEEE infinity, so an
/// infinite cost never leaks into arithmetic. `where` records the first
/// location that made the cost infinite.
class Cost {
 public:
  Cost() = default;
  Cost(double value) : value_(value) {}  // NOLINT(google-explicit-constructor)

  static Cost infinite(std::string where) {
    Cost c;
    c.infinite_ = true;
    c.where_ = std::move(where);
    return c;
  }

  bool finite() const { return !infinite_; }

  double value() const {
    if (infinite_) throw NumericalError("infinite cost at " + where_);
    return value_;
  }

  /// The value, or `fallback` when infinite.
  double value_or(double fallback) const { return infinite_ ? fallback : value_; }

  const std::string& where() const { return where_; }

  Cost& operator+=(const Cost& other) {
    if (infinite_) return *this;
    if (other.infinite_) {
      infinite_ = true;
      where_ = other.where_;
      return *this;
    }
    value_ += other.value_;
    return *this;
  }

  friend Cost operator+(Cost a, const Cost& b) { return a += b; }

  friend Cost operator*(double w, Cost c) {
    if (c.infinite_) return c;
    c.value_ *= w;
    return c;
  }

 private:
  double value_ = 0.0;
  bool infinite_ = false;
  std::string where_;
};

/// Relative entropy cell ell(a) = a log a - a + 1, with ell(0) = 1.
inline double ell(double a) {
  if (!(a >= 0.0)) throw std::domain_error("ell: negative argument");
  if (a == 0.0) return 1.0;
  if (a > 0.5 && a < 2.0) {
    // log1p keeps the O((a-1)^2) value accurate near the minimum.
    const double d = a - 1.0;
    return a * std::log1p(d) - d;
  }
  return a * std::log(a) - a + 1.0;
}

/// x * ell(y / x) = y log(y / x) - y + x for x > 0, y >= 0.
/// The divisor inside the logarithm is floored at `floor`.
inline double scaled_ell(double y, double x, double floor = 0.0) {
  const double xf = std::max(x, floor);
  if (y == 0.0) return x;
  const double r = y / xf;
  if (r > 0.5 && r < 2.0) return xf * ell(r) + (x - xf);
  return y * std::log(r) - y + x;
}

/// Geodesic distance on the circle parameterized by [0, 2 pi).
inline double circle_distance(double a, double b) {
  double d = std::fmod(std::abs(a - b), kTwoPi);
  return std::min(d, kTwoPi - d);
}

}  // namespace gldp
