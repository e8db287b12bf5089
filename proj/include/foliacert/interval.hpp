#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "foliacert/errors.hpp"

namespace foliacert {

/// Closed interval with outward rounding: every operation widens its result by one ulp on each
/// side, so the true real-arithmetic range is always enclosed.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  Interval() = default;
  Interval(double v) : lo(v), hi(v) {}  // NOLINT(google-explicit-constructor)
  Interval(double l, double h) : lo(l), hi(h) {}

  double width() const { return hi - lo; }
  double mag() const { return std::max(std::abs(lo), std::abs(hi)); }
  bool contains(double v) const { return lo <= v && v <= hi; }
};

namespace detail {
inline double down(double v) { return std::nextafter(v, -std::numeric_limits<double>::infinity()); }
inline double up(double v) { return std::nextafter(v, std::numeric_limits<double>::infinity()); }
inline Interval widen(double l, double h) { return {down(l), up(h)}; }
}  // namespace detail

inline Interval operator+(Interval a, Interval b) { return detail::widen(a.lo + b.lo, a.hi + b.hi); }
inline Interval operator-(Interval a, Interval b) { return detail::widen(a.lo - b.hi, a.hi - b.lo); }
inline Interval operator-(Interval a) { return {-a.hi, -a.lo}; }

inline Interval operator*(Interval a, Interval b) {
  const double p[4] = {a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi};
  return detail::widen(*std::min_element(p, p + 4), *std::max_element(p, p + 4));
}

inline Interval operator/(Interval a, Interval b) {
  if (b.contains(0.0)) throw BoundError("interval division by an interval containing zero");
  const Interval inv = detail::widen(1.0 / b.hi, 1.0 / b.lo);
  return a * inv;
}

inline Interval square(Interval a) {
  if (a.lo >= 0) return detail::widen(a.lo * a.lo, a.hi * a.hi);
  if (a.hi <= 0) return detail::widen(a.hi * a.hi, a.lo * a.lo);
  return {0.0, detail::up(std::max(a.lo * a.lo, a.hi * a.hi))};
}

inline Interval pow(Interval a, int n) {
  if (n == 0) return Interval(1.0);
  if (n < 0) return Interval(1.0) / pow(a, -n);
  Interval result(1.0);
  Interval base = a;
  // Even powers go through square() so the result never dips below zero.
  while (n > 0) {
    if (n & 1) result = result * base;
    n >>= 1;
    if (n > 0) base = square(base);
  }
  return result;
}

inline Interval exp(Interval a) { return detail::widen(std::exp(a.lo), std::exp(a.hi)); }

inline Interval sqrt(Interval a) {
  if (a.lo < 0) throw BoundError("interval sqrt of a range reaching below zero");
  return {std::max(0.0, detail::down(std::sqrt(a.lo))), detail::up(std::sqrt(a.hi))};
}

// sin/cos are bounded by [-1, 1]; tighter enclosures are not needed for Lipschitz bounds.
inline Interval sin(Interval a) {
  if (a.width() == 0) return detail::widen(std::sin(a.lo), std::sin(a.lo));
  return {-1.0, 1.0};
}
inline Interval cos(Interval a) {
  if (a.width() == 0) return detail::widen(std::cos(a.lo), std::cos(a.lo));
  return {-1.0, 1.0};
}

}  // namespace foliacert
