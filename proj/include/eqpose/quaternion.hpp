#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

namespace eqpose {

template <class T>
using Vec3 = std::array<T, 3>;

template <class T>
using Cloud = std::vector<Vec3<T>>;

template <class T>
using Mat3 = std::array<std::array<T, 3>, 3>;

template <class T>
constexpr Vec3<T> operator+(const Vec3<T>& a, const Vec3<T>& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
template <class T>
constexpr Vec3<T> operator-(const Vec3<T>& a, const Vec3<T>& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
template <class T>
constexpr Vec3<T> operator*(T s, const Vec3<T>& a) {
  return {s * a[0], s * a[1], s * a[2]};
}
template <class T>
constexpr T dot(const Vec3<T>& a, const Vec3<T>& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
template <class T>
constexpr Vec3<T> cross(const Vec3<T>& a, const Vec3<T>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}
template <class T>
T norm(const Vec3<T>& a) {
  return std::sqrt(dot(a, a));
}
template <class T>
constexpr T squared_distance(const Vec3<T>& a, const Vec3<T>& b) {
  const T dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

template <class To, class From>
Cloud<To> cloud_cast(const Cloud<From>& in) {
  Cloud<To> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i)
    out[i] = {static_cast<To>(in[i][0]), static_cast<To>(in[i][1]),
              static_cast<To>(in[i][2])};
  return out;
}

template <class T>
Vec3<T> centroid(const Cloud<T>& pts) {
  Vec3<T> c{0, 0, 0};
  for (const auto& p : pts) c = c + p;
  if (!pts.empty()) c = (T(1) / static_cast<T>(pts.size())) * c;
  return c;
}

/// Quaternion (w, x, y, z) with the Hamilton product. `a * b` rotates by
/// `b` first, then by `a`.
template <class T>
struct Quaternion {
  T w{1}, x{0}, y{0}, z{0};

  static constexpr Quaternion identity() { return {1, 0, 0, 0}; }

  static Quaternion from_axis_angle(Vec3<T> axis, T angle) {
    const T n = eqpose::norm(axis);
    const T s = std::sin(angle / 2) / n;
    return {std::cos(angle / 2), axis[0] * s, axis[1] * s, axis[2] * s};
  }

  constexpr Quaternion operator*(const Quaternion& b) const {
    return {w * b.w - x * b.x - y * b.y - z * b.z,
            w * b.x + x * b.w + y * b.z - z * b.y,
            w * b.y - x * b.z + y * b.w + z * b.x,
            w * b.z + x * b.y - y * b.x + z * b.w};
  }

  constexpr Quaternion conjugate() const { return {w, -x, -y, -z}; }
  constexpr T squared_norm() const { return w * w + x * x + y * y + z * z; }
  T norm() const { return std::sqrt(squared_norm()); }

  Quaternion inverse() const {
    const T n2 = squared_norm();
    return {w / n2, -x / n2, -y / n2, -z / n2};
  }

  Quaternion normalized() const {
    const T n = norm();
    return {w / n, x / n, y / n, z / n};
  }

  constexpr Quaternion negated() const { return {-w, -x, -y, -z}; }

  /// Sign representative with w >= 0; for w == 0 the first nonzero of
  /// (x, y, z) is made positive.
  constexpr Quaternion canonical() const {
    const std::array<T, 4> c{w, x, y, z};
    for (T v : c) {
      if (v > 0) return *this;
      if (v < 0) return negated();
    }
    return *this;
  }

  constexpr std::array<T, 4> array() const { return {w, x, y, z}; }

  template <class U>
  constexpr Quaternion<U> cast() const {
    return {static_cast<U>(w), static_cast<U>(x), static_cast<U>(y),
            static_cast<U>(z)};
  }

  /// Rotation matrix of the normalized quaternion.
  Mat3<T> matrix() const {
    const Quaternion q = normalized();
    const T ww = q.w * q.w, xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
    const T xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
    const T wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
    return {{{ww + xx - yy - zz, 2 * (xy - wz), 2 * (xz + wy)},
             {2 * (xy + wz), ww - xx + yy - zz, 2 * (yz - wx)},
             {2 * (xz - wy), 2 * (yz + wx), ww - xx - yy + zz}}};
  }

  /// q v q^-1 for a unit quaternion, as a pure-quaternion conjugation.
  Vec3<T> rotate(const Vec3<T>& v) const {
    const Quaternion p{0, v[0], v[1], v[2]};
    const Quaternion r = (*this) * p * conjugate();
    return {r.x, r.y, r.z};
  }
};

template <class T>
constexpr T dot(const Quaternion<T>& a, const Quaternion<T>& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

/// Hamilton product with canonical sign. Magnitude is not renormalized.
template <class T>
constexpr Quaternion<T> compose(const Quaternion<T>& a,
                                const Quaternion<T>& b) {
  return (a * b).canonical();
}

/// Geodesic angle in radians between the rotations of two quaternions.
template <class T>
T geodesic_angle(const Quaternion<T>& a, const Quaternion<T>& b) {
  // Same value as 2 acos |<a, b>|, but accurate near 0 and pi.
  const Quaternion<T> d = a.normalized().conjugate() * b.normalized();
  return 2 * std::atan2(std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z), std::abs(d.w));
}

/// Rotation angle of a quaternion, in [0, pi].
template <class T>
T rotation_angle(const Quaternion<T>& q) {
  return geodesic_angle(q, Quaternion<T>::identity());
}

template <class T>
Vec3<T> apply(const Mat3<T>& m, const Vec3<T>& v) {
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
          m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

template <class T>
Cloud<T> rotate_points(const Quaternion<T>& q, const Cloud<T>& pts) {
  Cloud<T> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) out[i] = q.rotate(pts[i]);
  return out;
}

template <class T>
Cloud<T> translate_points(const Cloud<T>& pts, const Vec3<T>& t) {
  Cloud<T> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) out[i] = pts[i] + t;
  return out;
}

/// Proper rigid transform: p -> q p q^-1 + t.
template <class T>
struct RigidPose {
  Quaternion<T> rotation{};
  Vec3<T> translation{0, 0, 0};

  static RigidPose identity() { return {}; }

  Vec3<T> apply(const Vec3<T>& p) const {
    return rotation.rotate(p) + translation;
  }

  Cloud<T> apply(const Cloud<T>& pts) const {
    const Mat3<T> m = rotation.matrix();
    Cloud<T> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
      out[i] = eqpose::apply(m, pts[i]) + translation;
    return out;
  }

  RigidPose inverse() const {
    const Quaternion<T> inv = rotation.normalized().conjugate().canonical();
    const Vec3<T> t = inv.rotate(translation);
    return {inv, {-t[0], -t[1], -t[2]}};
  }

  /// (*this) after `b`.
  RigidPose operator*(const RigidPose& b) const {
    return {compose(rotation, b.rotation),
            rotation.rotate(b.translation) + translation};
  }
};

inline constexpr double kPi = std::numbers::pi;

inline double degrees(double rad) { return rad * 180.0 / kPi; }
inline double radians(double deg) { return deg * kPi / 180.0; }

}  // namespace eqpose
