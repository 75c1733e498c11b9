#pragma once

#include <array>
#include <cstddef>

namespace neurbf {

template <int D>
using Point = std::array<double, D>;

using Vec3 = Point<3>;

/// Squared Euclidean distance, summed in coordinate order (callers rely on the exact order).
template <int D>
inline double squared_distance(const Point<D>& a, const Point<D>& b) noexcept {
  double s = 0.0;
  for (int j = 0; j < D; ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

}  // namespace neurbf
