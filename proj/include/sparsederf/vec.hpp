// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <type_traits>

#include "sparsederf/common.hpp"

namespace sderf {

using std::cos;
using std::exp;
using std::log;
using std::sin;
using std::sqrt;

// Small fixed-size vectors, generic over the scalar type so the same geometry
// code runs on plain doubles and on autodiff variables.

template <class S>
struct Vec2 {
  S x{}, y{};
};

template <class S>
struct Vec3 {
  S x{}, y{}, z{};

  Vec3() = default;
  Vec3(S x_, S y_, S z_) : x(x_), y(y_), z(z_) {}
};

using Vec2d = Vec2<double>;
using Vec3d = Vec3<double>;

template <class S, class T>
inline auto operator+(const Vec3<S>& a, const Vec3<T>& b)
    -> Vec3<decltype(a.x + b.x)> {
  return {a.x + b.x, a.y + b.y, a.z + b.z};
}

template <class S, class T>
inline auto operator-(const Vec3<S>& a, const Vec3<T>& b)
    -> Vec3<decltype(a.x - b.x)> {
  return {a.x - b.x, a.y - b.y, a.z - b.z};
}

template <class S>
inline Vec3<S> operator-(const Vec3<S>& a) {
  return {-a.x, -a.y, -a.z};
}

template <class S, class T>
inline auto operator*(const Vec3<S>& a, const T& s)
    -> Vec3<decltype(a.x * s)> {
  return {a.x * s, a.y * s, a.z * s};
}

template <class S, class T>
inline auto operator*(const T& s, const Vec3<S>& a)
    -> Vec3<decltype(s * a.x)> {
  return {s * a.x, s * a.y, s * a.z};
}

template <class S>
inline Vec3<S> operator/(const Vec3<S>& a, const S& s) {
  return {a.x / s, a.y / s, a.z / s};
}

template <class S>
inline S dot(const Vec3<S>& a, const Vec3<S>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template <class S>
inline Vec3<S> cross(const Vec3<S>& a, const Vec3<S>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z,
          a.x * b.y - a.y * b.x};
}

template <class S>
inline S norm(const Vec3<S>& a) {
  return sqrt(dot(a, a));
}

template <class S>
inline Vec3<S> normalized(const Vec3<S>& a) {
  S n = norm(a);
  return {a.x / n, a.y / n, a.z / n};
}

// Row-major 3x3 matrix.
template <class S>
struct Mat3 {
  S m[3][3]{};

  static Mat3 identity() {
    Mat3 r;
    r.m[0][0] = S(1.0);
    r.m[1][1] = S(1.0);
    r.m[2][2] = S(1.0);
    return r;
  }

  Vec3<S> col(int j) const { return {m[0][j], m[1][j], m[2][j]}; }
  Vec3<S> row(int i) const { return {m[i][0], m[i][1], m[i][2]}; }
};

using Mat3d = Mat3<double>;

template <class S>
inline Vec3<S> operator*(const Mat3<S>& A, const Vec3<S>& v) {
  return {A.m[0][0] * v.x + A.m[0][1] * v.y + A.m[0][2] * v.z,
          A.m[1][0] * v.x + A.m[1][1] * v.y + A.m[1][2] * v.z,
          A.m[2][0] * v.x + A.m[2][1] * v.y + A.m[2][2] * v.z};
}

template <class S>
inline Mat3<S> operator*(const Mat3<S>& A, const Mat3<S>& B) {
  Mat3<S> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      r.m[i][j] =
          A.m[i][0] * B.m[0][j] + A.m[i][1] * B.m[1][j] + A.m[i][2] * B.m[2][j];
  return r;
}

template <class S>
inline Mat3<S> transpose(const Mat3<S>& A) {
  Mat3<S> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.m[i][j] = A.m[j][i];
  return r;
}

}  // namespace sderf
