#pragma once

// Point-to-point ICP and the 60-restart variant.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eqpose/errors.hpp"
#include "eqpose/geometry.hpp"
#include "eqpose/quaternion.hpp"
#include "eqpose/rotation_group.hpp"

namespace eqpose {

struct ICPResult {
  RigidPose<double> pose;  // maps source into the target frame
  double cost = 0;         // mean squared closest-point distance
  std::size_t iterations = 0;
  std::size_t init_index = 0;
};

struct ICPOptions {
  std::size_t max_iter = 100;
  double tol = 1e-6;
};

inline Quaternion<double> quaternion_from_matrix(const Eigen::Matrix3d& R) {
  Eigen::Quaterniond q(R);
  q.normalize();
  return Quaternion<double>{q.w(), q.x(), q.y(), q.z()}.canonical();
}

/// Least-squares rigid transform taking src[i] to dst[i] (Kabsch with
/// reflection correction).
inline RigidPose<double> best_rigid_transform(const Cloud<double>& src,
                                              const Cloud<double>& dst) {
  EQPOSE_EXPECT(src.size() == dst.size() && !src.empty(),
                "best_rigid_transform: mismatched inputs");
  const Vec3<double> cs = centroid(src), cd = centroid(dst);
  Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
  double spread = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3<double> a = src[i] - cs, b = dst[i] - cd;
    spread += dot(a, a);
    H += Eigen::Vector3d(a[0], a[1], a[2]) * Eigen::Vector3d(b[0], b[1], b[2]).transpose();
  }
  if (!(spread > 1e-20))
    throw NumericalError(
        "ICP: degenerate cross-covariance (all source points coincide)");
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  if ((V * U.transpose()).determinant() < 0) D(2, 2) = -1;
  const Eigen::Matrix3d R = V * D * U.transpose();
  const Quaternion<double> q = quaternion_from_matrix(R);
  const Vec3<double> t = cd - q.rotate(cs);
  return {q, t};
}

namespace detail {

// Nearest target point per source point and the mean squared distance.
inline double match(const Cloud<double>& src, const Cloud<double>& target,
                    Cloud<double>& matched) {
  matched.resize(src.size());
  double total = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0;
    const auto& p = src[i];
    for (std::size_t j = 0; j < target.size(); ++j) {
      const double d = squared_distance(p, target[j]);
      if (d < best) best = d, bi = j;
    }
    matched[i] = target[bi];
    total += best;
  }
  return total / double(src.size());
}

}  // namespace detail

/// Aligns `source` onto `target` starting from `init`. Correspondences run
/// from source to target. Stops when the relative cost improvement falls
/// below `tol` or after `max_iter` iterations.
inline ICPResult icp_once(const Cloud<double>& source, const Cloud<double>& target,
                          const RigidPose<double>& init, const ICPOptions& opt = {}) {
  EQPOSE_EXPECT(!source.empty() && !target.empty(), "icp: empty point cloud");
  ICPResult r;
  r.pose = init;
  Cloud<double> matched;
  double cost = detail::match(r.pose.apply(source), target, matched);
  while (r.iterations < opt.max_iter) {
    if (cost < 1e-14) break;
    const RigidPose<double> next = best_rigid_transform(source, matched);
    Cloud<double> next_matched;
    const double next_cost = detail::match(next.apply(source), target, next_matched);
    ++r.iterations;
    if (next_cost > cost) break;  // numerical noise only; keep the better pose
    const double improvement = (cost - next_cost) / cost;
    r.pose = next;
    matched = std::move(next_matched);
    cost = next_cost;
    if (improvement < opt.tol) break;
  }
  r.cost = cost;
  return r;
}

/// Pose of `tmpl` in the observation frame: ICP from each of the 60 group
/// rotations, lowest final cost wins (ties to the lowest init index).
inline ICPResult icp_60(const Cloud<double>& observation, const Cloud<double>& tmpl,
                        const RotationGroup& G, const ICPOptions& opt = {}) {
  EQPOSE_EXPECT(!observation.empty() && !tmpl.empty(), "icp: empty point cloud");
  const Vec3<double> co = centroid(observation), ct = centroid(tmpl);
  ICPResult best;
  best.cost = std::numeric_limits<double>::infinity();
  std::size_t failures = 0;
  std::string last_error;
  for (std::size_t j = 0; j < G.size(); ++j) {
    // Template pose guess g_j; the ICP transform maps observation to template.
    const Quaternion<double> inv = G[j].conjugate();
    const RigidPose<double> init{inv, ct - inv.rotate(co)};
    try {
      ICPResult r = icp_once(observation, tmpl, init, opt);
      if (r.cost < best.cost) {
        best = r;
        best.init_index = j;
      }
    } catch (const NumericalError& e) {
      ++failures;
      last_error = e.what();
    }
  }
  if (failures == G.size()) throw NumericalError(last_error);
  best.pose = best.pose.inverse();
  return best;
}

}  // namespace eqpose
