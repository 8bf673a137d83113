#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "eqpose/errors.hpp"
#include "eqpose/quaternion.hpp"

namespace eqpose {

/// Ball neighbourhoods of `centers` among `points`.
template <class T>
struct Neighborhoods {
  std::vector<std::vector<std::size_t>> index;
  std::vector<std::vector<Vec3<T>>> offset;  // points[index] - center
};

/// For each center, indices of points within `radius` (inclusive), nearest
/// first and truncated to `max_k`; ties broken by lower index.
template <class T>
Neighborhoods<T> neighborhoods(const Cloud<T>& centers, const Cloud<T>& points,
                               T radius, std::size_t max_k) {
  EQPOSE_EXPECT(radius > 0, "neighborhoods: radius must be positive");
  EQPOSE_EXPECT(max_k > 0, "neighborhoods: max_k must be positive");
  Neighborhoods<T> nb;
  nb.index.resize(centers.size());
  nb.offset.resize(centers.size());
  const T r2 = radius * radius;
  std::vector<std::pair<T, std::size_t>> cand;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    cand.clear();
    for (std::size_t i = 0; i < points.size(); ++i) {
      const T d2 = squared_distance(points[i], centers[c]);
      if (d2 <= r2) cand.emplace_back(d2, i);
    }
    std::sort(cand.begin(), cand.end());
    if (cand.size() > max_k) cand.resize(max_k);
    for (const auto& [d2, i] : cand) {
      nb.index[c].push_back(i);
      nb.offset[c].push_back(points[i] - centers[c]);
    }
  }
  return nb;
}

/// Neighbourhoods of a cloud within itself; each point is its own
/// neighbour.
template <class T>
Neighborhoods<T> neighborhoods(const Cloud<T>& points, T radius,
                               std::size_t max_k) {
  return neighborhoods(points, points, radius, max_k);
}

/// Farthest-point sampling starting from index 0. Ties go to the lower index.
template <class T>
std::vector<std::size_t> farthest_point_sampling(const Cloud<T>& pts,
                                                 std::size_t count) {
  EQPOSE_EXPECT(count <= pts.size(),
                "farthest_point_sampling: count exceeds cloud size");
  std::vector<std::size_t> picked;
  if (count == 0) return picked;
  picked.reserve(count);
  std::vector<T> dmin(pts.size(), std::numeric_limits<T>::infinity());
  std::size_t cur = 0;
  for (std::size_t k = 0; k < count; ++k) {
    picked.push_back(cur);
    std::size_t next = 0;
    T best = -1;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      dmin[i] = std::min(dmin[i], squared_distance(pts[i], pts[cur]));
      if (dmin[i] > best) {
        best = dmin[i];
        next = i;
      }
    }
    cur = next;
  }
  return picked;
}

template <class T>
Cloud<T> select(const Cloud<T>& pts, const std::vector<std::size_t>& idx) {
  Cloud<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(pts.at(i));
  return out;
}

/// Mean over `from` of the squared distance to the nearest point of `to`.
template <class T>
T mean_nearest_sqdist(const Cloud<T>& from, const Cloud<T>& to) {
  EQPOSE_EXPECT(!from.empty() && !to.empty(), "chamfer: empty point cloud");
  T total = 0;
  for (const auto& p : from) {
    T best = std::numeric_limits<T>::infinity();
    for (const auto& q : to) best = std::min(best, squared_distance(p, q));
    total += best;
  }
  return total / static_cast<T>(from.size());
}

/// Bidirectional chamfer distance with squared distances.
template <class T>
T chamfer_bidirectional(const Cloud<T>& X, const Cloud<T>& Y) {
  return mean_nearest_sqdist(X, Y) + mean_nearest_sqdist(Y, X);
}

/// Mean over X of the squared distance to the nearest point of Y.
template <class T>
T chamfer_unidirectional(const Cloud<T>& X, const Cloud<T>& Y) {
  return mean_nearest_sqdist(X, Y);
}

enum class DistanceMode { complete, partial };

template <class T>
T cloud_distance(const Cloud<T>& X, const Cloud<T>& Y, DistanceMode mode) {
  return mode == DistanceMode::complete ? chamfer_bidirectional(X, Y)
                                        : chamfer_unidirectional(X, Y);
}

}  // namespace eqpose
