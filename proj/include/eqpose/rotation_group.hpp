#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "eqpose/quaternion.hpp"

namespace eqpose {

/// The 60 rotations of the icosahedron.
///
/// Elements are canonical unit quaternions sorted by (w, x, y, z) descending,
/// so the identity sits at index 0. `cayley[a][b]` is the index of
/// g_a * g_b and `inverse[a]` the index of g_a^-1.
class RotationGroup {
 public:
  static constexpr std::size_t kOrder = 60;
  using Permutation = std::array<std::size_t, kOrder>;

  std::array<Quaternion<double>, kOrder> elements{};
  std::array<std::array<std::size_t, kOrder>, kOrder> cayley{};
  std::array<std::size_t, kOrder> inverse{};

  std::size_t size() const { return kOrder; }
  const Quaternion<double>& operator[](std::size_t j) const {
    return elements[j];
  }

  /// Index of the element within `tol` radians of q, or kOrder if none.
  std::size_t find(const Quaternion<double>& q, double tol = 1e-6) const {
    const double c = std::cos(tol / 2);
    for (std::size_t j = 0; j < kOrder; ++j)
      if (std::abs(dot(elements[j], q)) >= c) return j;
    return kOrder;
  }

  /// sigma(j) = index of g * g_j.
  Permutation permutation_of(std::size_t g) const {
    if (g >= kOrder) throw std::out_of_range("group index out of range");
    return cayley[g];
  }

  /// Elements with rotation angle 2*pi/5 (the 12 nearest neighbours of the
  /// identity), in index order.
  std::vector<std::size_t> order_five_elements() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 1; j < kOrder; ++j)
      if (std::abs(rotation_angle(elements[j]) - 2 * kPi / 5) < 1e-9)
        out.push_back(j);
    return out;
  }

  /// Unit vertex directions of the icosahedron: the axes of the 12
  /// order-five elements.
  std::vector<Vec3<double>> icosahedron_vertices() const {
    std::vector<Vec3<double>> out;
    for (std::size_t j : order_five_elements()) {
      const auto& q = elements[j];
      const Vec3<double> axis{q.x, q.y, q.z};
      out.push_back((1.0 / norm(axis)) * axis);
    }
    return out;
  }

  void write_csv(std::ostream& os) const {
    os.precision(17);
    os << "index,w,x,y,z\n";
    for (std::size_t j = 0; j < kOrder; ++j) {
      const auto& q = elements[j];
      os << j << ',' << q.w << ',' << q.x << ',' << q.y << ',' << q.z << '\n';
    }
  }
};

namespace detail {

// Every coordinate of an icosahedral quaternion in the standard orientation
// is one of 0, +-1/2, +-phi/2, +-1/(2 phi), +-1.
inline double snap_icosahedral(double v) {
  const double phi = (1 + std::sqrt(5.0)) / 2;
  const std::array<double, 5> mags{0.0, 0.5, phi / 2, 1 / (2 * phi), 1.0};
  for (double m : mags) {
    if (std::abs(v - m) < 1e-9) return m;
    if (std::abs(v + m) < 1e-9) return -m;
  }
  return v;
}

}  // namespace detail

inline RotationGroup build_icosahedral_group() {
  const double phi = (1 + std::sqrt(5.0)) / 2;
  // Vertex (0, 1, phi) is a five-fold axis; the z axis passes through the
  // midpoint of the edge (0, +-1, phi) and is two-fold.
  const auto five = Quaternion<double>::from_axis_angle({0, 1, phi}, 2 * kPi / 5);
  const auto two = Quaternion<double>::from_axis_angle({0, 0, 1}, kPi);
  const std::array<Quaternion<double>, 2> gens{five, two};

  auto snap = [](Quaternion<double> q) {
    q = q.canonical();
    return Quaternion<double>{detail::snap_icosahedral(q.w),
                              detail::snap_icosahedral(q.x),
                              detail::snap_icosahedral(q.y),
                              detail::snap_icosahedral(q.z)}
        .canonical();
  };
  auto contains = [](const std::vector<Quaternion<double>>& v,
                     const Quaternion<double>& q) {
    return std::any_of(v.begin(), v.end(), [&](const auto& e) {
      return std::abs(dot(e, q)) > 1 - 1e-12;
    });
  };

  std::vector<Quaternion<double>> found{Quaternion<double>::identity()};
  for (std::size_t head = 0; head < found.size(); ++head) {
    for (const auto& g : gens) {
      const auto q = snap(found[head] * g);
      if (!contains(found, q)) found.push_back(q);
    }
    if (found.size() > RotationGroup::kOrder)
      throw std::logic_error("icosahedral closure exceeded 60 elements");
  }
  if (found.size() != RotationGroup::kOrder)
    throw std::logic_error("icosahedral closure did not reach 60 elements");

  auto key_greater = [](const Quaternion<double>& a,
                        const Quaternion<double>& b) {
    const auto ka = a.array(), kb = b.array();
    for (std::size_t i = 0; i < 4; ++i) {
      if (ka[i] > kb[i] + 1e-12) return true;
      if (ka[i] < kb[i] - 1e-12) return false;
    }
    return false;
  };
  std::sort(found.begin(), found.end(), key_greater);

  RotationGroup G;
  std::copy(found.begin(), found.end(), G.elements.begin());
  for (std::size_t a = 0; a < RotationGroup::kOrder; ++a) {
    for (std::size_t b = 0; b < RotationGroup::kOrder; ++b) {
      const std::size_t k = G.find(G.elements[a] * G.elements[b]);
      if (k == RotationGroup::kOrder)
        throw std::logic_error("group product not found in element table");
      G.cayley[a][b] = k;
      if (k == 0) G.inverse[a] = b;
    }
  }
  return G;
}

/// Process-wide immutable instance.
inline const RotationGroup& icosahedral_group() {
  static const RotationGroup G = build_icosahedral_group();
  return G;
}

struct NearestElement {
  std::size_t index;
  Quaternion<double> residual;
};

/// Element maximizing |<q, g_j>| (ties to the lowest index) and the residual
/// r with q = g_index * r.
inline NearestElement nearest_element(const Quaternion<double>& q,
                                      const RotationGroup& G) {
  std::size_t best = 0;
  double best_dot = -1;
  for (std::size_t j = 0; j < G.size(); ++j) {
    const double d = std::abs(dot(q, G[j]));
    if (d > best_dot) {
      best_dot = d;
      best = j;
    }
  }
  return {best, compose(G[best].conjugate(), q)};
}

}  // namespace eqpose
