#pragma once

// Incremental 3D convex hull. Returns the indices of input points that are
// hull vertices.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <utility>
#include <vector>

#include "eqpose/errors.hpp"
#include "eqpose/quaternion.hpp"

namespace eqpose {

namespace detail {

struct HullFace {
  std::array<std::size_t, 3> v;
  Vec3<double> n;  // outward, unnormalized
  double d;        // n . x = d on the plane
  bool alive = true;
};

inline HullFace make_face(const Cloud<double>& P, std::size_t a, std::size_t b,
                          std::size_t c) {
  HullFace f;
  f.v = {a, b, c};
  f.n = cross(P[b] - P[a], P[c] - P[a]);
  f.d = dot(f.n, P[a]);
  return f;
}

inline double face_distance(const HullFace& f, const Vec3<double>& p) {
  return dot(f.n, p) - f.d;
}

}  // namespace detail

/// Indices (ascending) of the vertices of the convex hull of P. Requires at
/// least four non-coplanar points.
inline std::vector<std::size_t> convex_hull_vertices(const Cloud<double>& P) {
  const std::size_t n = P.size();
  EQPOSE_EXPECT(n >= 4, "convex hull needs at least 4 points");
  double scale = 0;
  for (const auto& p : P)
    for (double c : p) scale = std::max(scale, std::abs(c));
  const double eps = 1e-12 * std::max(scale, 1.0);

  // Initial tetrahedron from extreme points.
  std::size_t i0 = 0, i1 = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (P[i][0] < P[i0][0]) i0 = i;
    if (P[i][0] > P[i1][0]) i1 = i;
  }
  if (i0 == i1) throw NumericalError("convex hull: degenerate point set");
  std::size_t i2 = n;
  double best = 0;
  const Vec3<double> e = P[i1] - P[i0];
  for (std::size_t i = 0; i < n; ++i) {
    const double a = norm(cross(e, P[i] - P[i0]));
    if (a > best) best = a, i2 = i;
  }
  if (i2 == n || best <= eps * norm(e))
    throw NumericalError("convex hull: collinear point set");
  std::size_t i3 = n;
  best = 0;
  const Vec3<double> nrm = cross(e, P[i2] - P[i0]);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = std::abs(dot(nrm, P[i] - P[i0]));
    if (v > best) best = v, i3 = i;
  }
  if (i3 == n || best <= eps * norm(nrm))
    throw NumericalError("convex hull: coplanar point set");

  std::vector<detail::HullFace> faces;
  const Vec3<double> inner =
      0.25 * (P[i0] + P[i1] + P[i2] + P[i3]);
  auto add_face = [&](std::size_t a, std::size_t b, std::size_t c) {
    auto f = detail::make_face(P, a, b, c);
    if (detail::face_distance(f, inner) > 0) f = detail::make_face(P, a, c, b);
    faces.push_back(f);
  };
  add_face(i0, i1, i2);
  add_face(i0, i1, i3);
  add_face(i0, i2, i3);
  add_face(i1, i2, i3);

  std::vector<std::size_t> visible;
  std::map<std::pair<std::size_t, std::size_t>, int> edge_count;
  for (std::size_t p = 0; p < n; ++p) {
    if (p == i0 || p == i1 || p == i2 || p == i3) continue;
    visible.clear();
    for (std::size_t k = 0; k < faces.size(); ++k) {
      if (!faces[k].alive) continue;
      const double tol = eps * norm(faces[k].n);
      if (detail::face_distance(faces[k], P[p]) > tol) visible.push_back(k);
    }
    if (visible.empty()) continue;
    // Horizon: directed edges of visible faces whose reverse is not visible.
    edge_count.clear();
    for (std::size_t k : visible) {
      const auto& v = faces[k].v;
      for (int s = 0; s < 3; ++s) edge_count[{v[s], v[(s + 1) % 3]}] += 1;
    }
    for (std::size_t k : visible) faces[k].alive = false;
    for (const auto& [edge, cnt] : edge_count) {
      (void)cnt;
      if (edge_count.count({edge.second, edge.first})) continue;
      faces.push_back(detail::make_face(P, edge.first, edge.second, p));
    }
    if (faces.size() > 8 * n) {
      std::erase_if(faces, [](const auto& f) { return !f.alive; });
    }
  }
  std::vector<char> on_hull(n, 0);
  for (const auto& f : faces)
    if (f.alive)
      for (auto v : f.v) on_hull[v] = 1;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i)
    if (on_hull[i]) out.push_back(i);
  return out;
}

}  // namespace eqpose
