#pragma once

// Procedural object categories, pose sampling and partial-view synthesis.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "eqpose/convex_hull.hpp"
#include "eqpose/errors.hpp"
#include "eqpose/geometry.hpp"
#include "eqpose/quaternion.hpp"

namespace eqpose {

enum class Symmetry { none, axial, flip180 };

inline std::string to_string(Symmetry s) {
  switch (s) {
    case Symmetry::none: return "none";
    case Symmetry::axial: return "axial-continuous";
    case Symmetry::flip180: return "flip-180";
  }
  return "none";
}

inline Symmetry symmetry_from_string(const std::string& s) {
  if (s == "none") return Symmetry::none;
  if (s == "axial-continuous" || s == "axial") return Symmetry::axial;
  if (s == "flip-180" || s == "flip180") return Symmetry::flip180;
  throw ConfigError("unknown symmetry tag '" + s + "'");
}

enum class ViewPolicy { full_sphere, upper_hemisphere };

inline std::string to_string(ViewPolicy p) {
  return p == ViewPolicy::full_sphere ? "full-sphere" : "upper-hemisphere";
}

inline ViewPolicy view_policy_from_string(const std::string& s) {
  if (s == "full-sphere") return ViewPolicy::full_sphere;
  if (s == "upper-hemisphere") return ViewPolicy::upper_hemisphere;
  throw ConfigError("unknown viewpoint policy '" + s + "'");
}

/// Surface primitive in the canonical frame. Boxes are axis aligned;
/// cylinders and cones have their axis along `axis` (0 = x, 1 = y, 2 = z).
struct Primitive {
  enum class Kind { box, cylinder, cone } kind = Kind::box;
  Vec3<double> center{0, 0, 0};
  Vec3<double> size{0, 0, 0};  // box: full extents; cyl/cone: (radius, length, -)
  int axis = 1;
  bool caps = true;  // closed ends
  bool open_top = false;  // box without its +y face

  double area() const {
    switch (kind) {
      case Kind::box: {
        const double a = size[0], b = size[1], c = size[2];
        return 2 * (a * b + b * c + a * c) - (open_top ? a * c : 0);
      }
      case Kind::cylinder: {
        const double r = size[0], h = size[1];
        return 2 * kPi * r * h + (caps ? 2 * kPi * r * r : 0);
      }
      case Kind::cone: {
        const double r = size[0], h = size[1];
        return kPi * r * std::sqrt(r * r + h * h) + (caps ? kPi * r * r : 0);
      }
    }
    return 0;
  }

  /// Uniform surface sample.
  template <class Rng>
  Vec3<double> sample(Rng& rng) const {
    std::uniform_real_distribution<double> u(0, 1);
    auto place = [&](double radial_a, double along, double radial_b) {
      // Local (radial_a, along, radial_b) to world with `along` on `axis`.
      Vec3<double> p{};
      p[axis] = along;
      p[(axis + 1) % 3] = radial_a;
      p[(axis + 2) % 3] = radial_b;
      return center + p;
    };
    switch (kind) {
      case Kind::box: {
        const double a = size[0], b = size[1], c = size[2];
        std::vector<double> w{b * c, b * c, a * c, open_top ? 0 : a * c, a * b,
                              a * b};
        std::discrete_distribution<int> face(w.begin(), w.end());
        const int f = face(rng);
        Vec3<double> p{(u(rng) - 0.5) * a, (u(rng) - 0.5) * b, (u(rng) - 0.5) * c};
        const int ax = f / 2;
        p[ax] = (f % 2 == 0 ? -0.5 : 0.5) * size[ax];
        return center + p;
      }
      case Kind::cylinder: {
        const double r = size[0], h = size[1];
        const double side = 2 * kPi * r * h, cap = caps ? kPi * r * r : 0;
        const double pick = u(rng) * (side + 2 * cap);
        const double th = 2 * kPi * u(rng);
        if (pick < side)
          return place(r * std::cos(th), (u(rng) - 0.5) * h, r * std::sin(th));
        const double rr = r * std::sqrt(u(rng));
        const double y = pick < side + cap ? -0.5 * h : 0.5 * h;
        return place(rr * std::cos(th), y, rr * std::sin(th));
      }
      case Kind::cone: {
        // Base at along = -h/2, apex at +h/2.
        const double r = size[0], h = size[1];
        const double lat = kPi * r * std::sqrt(r * r + h * h);
        const double cap = caps ? kPi * r * r : 0;
        const double th = 2 * kPi * u(rng);
        if (u(rng) * (lat + cap) < lat) {
          const double s = std::sqrt(u(rng));  // distance from apex, fraction
          return place(s * r * std::cos(th), 0.5 * h - s * h, s * r * std::sin(th));
        }
        const double rr = r * std::sqrt(u(rng));
        return place(rr * std::cos(th), -0.5 * h, rr * std::sin(th));
      }
    }
    return center;
  }
};

/// Category: a part program producing primitives from an instance RNG.
struct CategorySpec {
  std::string name;
  Symmetry symmetry = Symmetry::none;
  std::function<std::vector<Primitive>(std::mt19937_64&)> parts;
};

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::vector<Primitive> plane_parts(std::mt19937_64& rng) {
  using K = Primitive::Kind;
  const double len = uniform(rng, 0.9, 1.2);
  const double rad = uniform(rng, 0.05, 0.08);
  const double span = uniform(rng, 0.8, 1.1);
  const double chord = uniform(rng, 0.14, 0.22);
  const double wing_z = uniform(rng, 0.08, 0.18);
  const double tail_span = uniform(rng, 0.3, 0.45);
  const double fin_h = uniform(rng, 0.25, 0.35);
  const double fin_c = uniform(rng, 0.18, 0.25);
  const double nose = uniform(rng, 0.2, 0.3);
  const double tail_z = -0.5 * len + 0.5 * fin_c;
  std::vector<Primitive> p;
  p.push_back({K::cylinder, {0, 0, 0}, {rad, len, 0}, 2, true});
  p.push_back({K::cone, {0, 0, 0.5 * len + 0.5 * nose}, {rad, nose, 0}, 2, false});
  // Low wing ahead of the centre, T-tail on top of a tall fin.
  p.push_back({K::box, {0, -0.6 * rad, wing_z}, {span, 0.02, chord}, 1});
  p.push_back({K::box, {0, rad + 0.5 * fin_h, tail_z}, {0.02, fin_h, fin_c}, 1});
  p.push_back({K::box, {0, rad + fin_h, tail_z}, {tail_span, 0.015, 0.1}, 1});
  return p;
}

inline std::vector<Primitive> chair_parts(std::mt19937_64& rng) {
  using K = Primitive::Kind;
  const double w = uniform(rng, 0.4, 0.55);
  const double d = uniform(rng, 0.4, 0.55);
  const double leg = uniform(rng, 0.35, 0.5);
  const double back = uniform(rng, 0.4, 0.6);
  const double th = uniform(rng, 0.03, 0.05);
  const double lw = uniform(rng, 0.03, 0.05);
  std::vector<Primitive> p;
  p.push_back({K::box, {0, 0, 0}, {w, th, d}, 1});
  for (double sx : {-1.0, 1.0})
    for (double sz : {-1.0, 1.0})
      p.push_back({K::box,
                   {sx * (0.5 * w - 0.5 * lw), -0.5 * th - 0.5 * leg,
                    sz * (0.5 * d - 0.5 * lw)},
                   {lw, leg, lw},
                   1});
  p.push_back({K::box, {0, 0.5 * th + 0.5 * back, -0.5 * d + 0.5 * th},
               {w, back, th}, 1});
  return p;
}

inline std::vector<Primitive> bottle_parts(std::mt19937_64& rng) {
  using K = Primitive::Kind;
  const double r = uniform(rng, 0.12, 0.18);
  const double body = uniform(rng, 0.45, 0.65);
  const double shoulder = uniform(rng, 0.1, 0.18);
  const double nr = uniform(rng, 0.035, 0.055);
  const double neck = uniform(rng, 0.12, 0.2);
  std::vector<Primitive> p;
  p.push_back({K::cylinder, {0, 0, 0}, {r, body, 0}, 1, true});
  // Truncated shoulder approximated by a cone clipped at the neck radius.
  const double full = shoulder * r / (r - nr);
  p.push_back({K::cone, {0, 0.5 * body + 0.5 * full, 0}, {r, full, 0}, 1, false});
  p.push_back({K::cylinder, {0, 0.5 * body + shoulder + 0.5 * neck, 0},
               {nr, neck, 0}, 1, true});
  return p;
}

inline std::vector<Primitive> box_parts(std::mt19937_64& rng) {
  using K = Primitive::Kind;
  const double a = uniform(rng, 0.7, 1.0);
  const double c = uniform(rng, 0.35, 0.55);
  const double h = uniform(rng, 0.25, 0.4);
  Primitive b{K::box, {0, 0, 0}, {a, h, c}, 1};
  b.open_top = true;
  return {b};
}

}  // namespace detail

/// The four shipped categories: plane, chair, bottle, box.
inline const std::vector<CategorySpec>& builtin_categories() {
  static const std::vector<CategorySpec> cats{
      {"plane", Symmetry::none, detail::plane_parts},
      {"chair", Symmetry::none, detail::chair_parts},
      {"bottle", Symmetry::axial, detail::bottle_parts},
      {"box", Symmetry::flip180, detail::box_parts},
  };
  return cats;
}

inline const CategorySpec& category(const std::string& name) {
  for (const auto& c : builtin_categories())
    if (c.name == name) return c;
  throw ConfigError("unknown category '" + name +
                    "' (expected plane, chair, bottle or box)");
}

/// Deterministic 64-bit stream key from a seed and identifiers.
inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a,
                                std::uint64_t b = 0, std::uint64_t c = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(mix(seed) ^ a) ^ b) ^ c);
}

/// Centers at the centroid and scales to unit bounding-box diagonal.
inline Cloud<double> normalize_cloud(Cloud<double> pts) {
  EQPOSE_EXPECT(!pts.empty(), "normalize_cloud: empty cloud");
  Vec3<double> lo = pts[0], hi = pts[0];
  for (const auto& p : pts)
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], p[k]);
      hi[k] = std::max(hi[k], p[k]);
    }
  const double diag = norm(hi - lo);
  if (!(diag > 1e-9)) throw NumericalError("normalize_cloud: degenerate extent");
  const Vec3<double> c = centroid(pts);
  for (auto& p : pts) p = (1.0 / diag) * (p - c);
  return pts;
}

/// Area-weighted surface samples of one instance, normalized.
inline Cloud<double> generate_instance(const CategorySpec& spec,
                                       std::uint64_t seed, std::size_t count) {
  EQPOSE_EXPECT(count >= 4, "generate_instance: need at least 4 points");
  std::mt19937_64 rng(seed);
  const auto parts = spec.parts(rng);
  std::vector<double> areas;
  for (const auto& p : parts) {
    for (double s : p.size)
      if (s < 0)
        throw ContractViolation("generate_instance: degenerate dimensions for "
                                "seed " + std::to_string(seed));
    const double a = p.area();
    if (!(a > 0) || !std::isfinite(a))
      throw ContractViolation("generate_instance: degenerate dimensions for seed " +
                              std::to_string(seed));
    areas.push_back(a);
  }
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  Cloud<double> pts(count);
  for (auto& p : pts) p = parts[pick(rng)].sample(rng);
  return normalize_cloud(std::move(pts));
}

/// Uniform random rotation (normalized 4D Gaussian), optionally restricted
/// so the canonical up axis (+y) tilts toward a camera on +z, and a
/// translation uniform in [-max_t, max_t]^3.
template <class Rng>
RigidPose<double> pose_sample(Rng& rng, ViewPolicy policy, double max_t = 0.2) {
  std::normal_distribution<double> nd(0, 1);
  Quaternion<double> q;
  for (;;) {
    q = Quaternion<double>{nd(rng), nd(rng), nd(rng), nd(rng)};
    if (q.squared_norm() < 1e-12) continue;
    q = q.normalized().canonical();
    if (policy == ViewPolicy::full_sphere) break;
    if (q.rotate({0, 1, 0})[2] > 0) break;
  }
  std::uniform_real_distribution<double> ut(-max_t, max_t);
  const double tx = ut(rng), ty = ut(rng), tz = ut(rng);
  return {q, {tx, ty, tz}};
}

/// Hidden-point removal by spherical flipping: indices of points visible
/// from `camera`. The flip radius is `radius_factor` times the largest
/// point distance from the camera.
inline std::vector<std::size_t> visible_points(const Cloud<double>& pts,
                                               const Vec3<double>& camera,
                                               double radius_factor = 100) {
  EQPOSE_EXPECT(pts.size() >= 4, "visible_points: need at least 4 points");
  double rmax = 0;
  for (const auto& p : pts) rmax = std::max(rmax, norm(p - camera));
  const double R = radius_factor * rmax;
  Cloud<double> flipped;
  flipped.reserve(pts.size() + 1);
  for (const auto& p : pts) {
    const Vec3<double> v = p - camera;
    const double d = norm(v);
    if (!(d > 0)) throw ContractViolation("visible_points: point at the camera");
    flipped.push_back((1 + 2 * (R - d) / d) * v);
  }
  flipped.push_back({0, 0, 0});
  auto hull = convex_hull_vertices(flipped);
  if (!hull.empty() && hull.back() == pts.size()) hull.pop_back();
  return hull;
}

inline constexpr double kCameraDistance = 3.0;

/// Visible subset from a camera at distance 3 on +z, resampled to `count`
/// points (without replacement when enough are visible).
template <class Rng>
Cloud<double> partial_view(const Cloud<double>& posed, std::size_t count,
                           Rng& rng) {
  const Vec3<double> camera{0, 0, kCameraDistance};
  const auto vis = visible_points(posed, camera);
  if (vis.empty()) throw NumericalError("partial_view: empty visible set");
  std::vector<std::size_t> pick;
  if (vis.size() >= count) {
    std::vector<std::size_t> idx = vis;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    pick = std::move(idx);
  } else {
    pick = vis;
    std::uniform_int_distribution<std::size_t> ui(0, vis.size() - 1);
    while (pick.size() < count) pick.push_back(vis[ui(rng)]);
  }
  return select(posed, pick);
}

}  // namespace eqpose
