#pragma once

#include <cstdint>
#include <numeric>

#include "vmr/util/errors.hpp"

namespace vmr {

// Exact rational used for reward bookkeeping. Numerators are fragment
// deltas and denominators divide the reward scaling constant, so int64
// arithmetic never overflows at any supported cluster size.
struct Frac {
  std::int64_t num = 0;
  std::int64_t den = 1;

  constexpr Frac() = default;
  Frac(std::int64_t n, std::int64_t d) : num(n), den(d) {
    if (den == 0) throw InvalidParameter("zero denominator");
    if (den < 0) {
      num = -num;
      den = -den;
    }
    normalize();
  }

  void normalize() {
    std::int64_t g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
    if (num == 0) den = 1;
  }

  Frac operator+(const Frac& o) const {
    return Frac(num * o.den + o.num * den, den * o.den);
  }
  Frac operator-(const Frac& o) const {
    return Frac(num * o.den - o.num * den, den * o.den);
  }
  Frac operator-() const { return Frac(-num, den); }
  Frac& operator+=(const Frac& o) { return *this = *this + o; }
  Frac& operator-=(const Frac& o) { return *this = *this - o; }
  bool operator==(const Frac& o) const { return num == o.num && den == o.den; }
  bool operator!=(const Frac& o) const { return !(*this == o); }

  double value() const {
    return static_cast<double>(num) / static_cast<double>(den);
  }
};

}  // namespace vmr
