#pragma once

// Hypothesis selection, frame calibration, pose metrics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "eqpose/errors.hpp"
#include "eqpose/geometry.hpp"
#include "eqpose/loss.hpp"
#include "eqpose/model.hpp"
#include "eqpose/quaternion.hpp"
#include "eqpose/synth.hpp"

namespace eqpose {

inline const Vec3<double> kUpAxis{0, 1, 0};

/// Rotation by pi about the canonical up axis.
inline Quaternion<double> flip_about_up() { return {0, 0, 1, 0}; }

/// Angle in degrees between the rotated up axes.
inline double up_axis_error(const Quaternion<double>& pred,
                            const Quaternion<double>& gt) {
  const Vec3<double> a = pred.normalized().rotate(kUpAxis);
  const Vec3<double> b = gt.normalized().rotate(kUpAxis);
  const double c = std::clamp(dot(a, b) / (norm(a) * norm(b)), -1.0, 1.0);
  return degrees(std::acos(c));
}

/// Rotation error in degrees under the category's symmetry rule.
inline double rotation_error(const Quaternion<double>& pred,
                             const Quaternion<double>& gt, Symmetry sym) {
  switch (sym) {
    case Symmetry::none:
      return degrees(geodesic_angle(pred, gt));
    case Symmetry::axial:
      return up_axis_error(pred, gt);
    case Symmetry::flip180:
      return std::min(degrees(geodesic_angle(pred, gt)),
                      degrees(geodesic_angle(pred, gt * flip_about_up())));
  }
  return 0;
}

struct PoseError {
  double r_err = 0;   // degrees, symmetry aware
  double t_err = 0;
  double r_full = 0;  // degrees, ignoring symmetry
  double up_err = 0;  // degrees
};

inline PoseError pose_errors(const RigidPose<double>& pred,
                             const RigidPose<double>& gt, Symmetry sym) {
  PoseError e;
  e.r_err = rotation_error(pred.rotation, gt.rotation, sym);
  e.t_err = norm(pred.translation - gt.translation);
  e.r_full = degrees(geodesic_angle(pred.rotation, gt.rotation));
  e.up_err = up_axis_error(pred.rotation, gt.rotation);
  return e;
}

struct Prediction {
  RigidPose<double> pose;  // raw, rotation normalized
  std::size_t selected_j = 0;
  std::vector<double> distances;
};

/// Pose of the hypothesis with the smallest distance (ties to lowest j).
template <class T>
Prediction select_hypothesis(const Cloud<T>& X, const Cloud<T>& Z,
                             const PoseHypothesisSet<T>& hyps, DistanceMode mode) {
  Prediction p;
  const auto d = hypothesis_distances(X, Z, hyps, mode);
  p.selected_j = argmin_hypothesis(d);
  p.distances.assign(d.begin(), d.end());
  p.pose = hyps.pose(p.selected_j);
  p.pose.rotation = p.pose.rotation.canonical();
  return p;
}

template <class T>
Prediction predict(Model<T>& model, const Cloud<double>& X, DistanceMode mode) {
  const Cloud<T> Xt = cloud_cast<T>(X);
  ad::Tape<T> tape;
  auto out = model.forward(tape, Xt);
  return select_hypothesis(Xt, to_cloud(out.shape.value()), out.hypotheses, mode);
}

struct FrameCalibration {
  Quaternion<double> rotation{};
  Vec3<double> translation{0, 0, 0};
  std::size_t inliers = 0;
  double inlier_fraction = 0;
};

struct CalibrationParams {
  double tau_r_deg = 15;
  double tau_t = 0.05;
  std::size_t iterations = 256;
  std::uint64_t seed = 0;
};

/// Distance between two misalignments in degrees. Misalignments act on the
/// canonical frame from the left, so symmetries are compared on inverses.
inline double misalignment_angle(const Quaternion<double>& a,
                                 const Quaternion<double>& b, Symmetry sym) {
  return rotation_error(a.normalized().conjugate(), b.normalized().conjugate(),
                        sym);
}

/// RANSAC consensus over misalignments (q~_k, t~_k).
inline FrameCalibration calibrate_frame(const std::vector<RigidPose<double>>& mis,
                                        Symmetry sym,
                                        const CalibrationParams& prm = {}) {
  EQPOSE_EXPECT(!mis.empty(), "calibrate_frame: no misalignments");
  const std::size_t n = mis.size();
  auto inliers_of = [&](std::size_t c) {
    std::vector<std::size_t> in;
    for (std::size_t k = 0; k < n; ++k)
      if (misalignment_angle(mis[k].rotation, mis[c].rotation, sym) < prm.tau_r_deg &&
          norm(mis[k].translation - mis[c].translation) < prm.tau_t)
        in.push_back(k);
    return in;
  };
  std::mt19937_64 rng(prm.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t best_c = 0;
  std::vector<std::size_t> best;
  for (std::size_t it = 0; it < prm.iterations; ++it) {
    const std::size_t c = pick(rng);
    auto in = inliers_of(c);
    if (in.size() > best.size()) {
      best = std::move(in);
      best_c = c;
    }
  }
  if (best.empty()) {
    double spread = 0;
    for (const auto& m : mis)
      spread = std::max(spread,
                        degrees(geodesic_angle(m.rotation, mis[0].rotation)));
    throw NumericalError("calibration failed: no inliers (rotation spread " +
                         std::to_string(spread) + " deg)");
  }
  // Average inverses aligned to the candidate, then invert back.
  const Quaternion<double> ref = mis[best_c].rotation.normalized().conjugate();
  Quaternion<double> acc{0, 0, 0, 0};
  Vec3<double> t{0, 0, 0};
  for (std::size_t k : best) {
    Quaternion<double> q = mis[k].rotation.normalized().conjugate();
    if (sym == Symmetry::flip180) {
      const Quaternion<double> alt = q * flip_about_up();
      if (geodesic_angle(alt, ref) < geodesic_angle(q, ref)) q = alt;
    }
    if (dot(q, ref) < 0) q = q.negated();
    acc = {acc.w + q.w, acc.x + q.x, acc.y + q.y, acc.z + q.z};
    t = t + mis[k].translation;
  }
  FrameCalibration cal;
  cal.rotation = acc.normalized().conjugate().canonical();
  cal.translation = (1.0 / double(best.size())) * t;
  cal.inliers = best.size();
  cal.inlier_fraction = double(best.size()) / double(n);
  return cal;
}

/// (q^ q~^-1, t^ - R(q^ q~^-1) t~).
inline RigidPose<double> apply_calibration(const RigidPose<double>& raw,
                                           const FrameCalibration& cal) {
  const Quaternion<double> q =
      compose(raw.rotation.normalized(), cal.rotation.normalized().conjugate());
  return {q, raw.translation - q.rotate(cal.translation)};
}

/// Brings a posed cloud back to the canonical frame: R^T (X - t).
inline Cloud<double> canonicalize(const Cloud<double>& X,
                                  const RigidPose<double>& gt) {
  return gt.inverse().apply(X);
}

struct MetricReport {
  std::size_t count = 0;
  double r_mean = 0, r_median = 0;
  double t_mean = 0, t_median = 0;
  double acc_5deg = 0, acc_5deg_5cm = 0;
  double up_mean = 0, up_median = 0;
  double r_full_median = 0;
  std::vector<double> r_percentiles;  // 5, 10, ..., 100
  std::vector<double> t_percentiles;
};

inline double median(std::vector<double> v) {
  EQPOSE_EXPECT(!v.empty(), "median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
inline double percentile(std::vector<double> v, double p) {
  EQPOSE_EXPECT(!v.empty(), "percentile of empty set");
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100 * double(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

inline MetricReport aggregate(const std::vector<PoseError>& errs) {
  EQPOSE_EXPECT(!errs.empty(), "aggregate: no errors");
  MetricReport m;
  m.count = errs.size();
  std::vector<double> r, t, up, full;
  std::size_t a5 = 0, a55 = 0;
  for (const auto& e : errs) {
    r.push_back(e.r_err);
    t.push_back(e.t_err);
    up.push_back(e.up_err);
    full.push_back(e.r_full);
    a5 += e.r_err <= 5;
    a55 += e.r_err <= 5 && e.t_err <= 0.05;
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / double(v.size());
  };
  m.r_mean = mean(r);
  m.r_median = median(r);
  m.t_mean = mean(t);
  m.t_median = median(t);
  m.up_mean = mean(up);
  m.up_median = median(up);
  m.r_full_median = median(full);
  m.acc_5deg = double(a5) / double(errs.size());
  m.acc_5deg_5cm = double(a55) / double(errs.size());
  for (int p = 5; p <= 100; p += 5) {
    m.r_percentiles.push_back(percentile(r, p));
    m.t_percentiles.push_back(percentile(t, p));
  }
  return m;
}

/// Mean distance between corresponding model points under the two poses.
inline double add_distance(const RigidPose<double>& pred,
                           const RigidPose<double>& gt,
                           const Cloud<double>& model) {
  const Cloud<double> a = pred.apply(model), b = gt.apply(model);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::sqrt(squared_distance(a[i], b[i]));
  return s / double(a.size());
}

/// Mean over pred-posed points of the distance to the closest gt-posed point.
inline double adds_distance(const RigidPose<double>& pred,
                            const RigidPose<double>& gt,
                            const Cloud<double>& model) {
  const Cloud<double> a = pred.apply(model), b = gt.apply(model);
  double s = 0;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) best = std::min(best, squared_distance(p, q));
    s += std::sqrt(best);
  }
  return s / double(a.size());
}

/// Area under the accuracy-threshold curve for thresholds 0 to 0.1 in 1000
/// uniform steps, scaled to [0, 100].
inline double distance_auc(const std::vector<double>& d, double max_t = 0.1,
                           std::size_t steps = 1000) {
  EQPOSE_EXPECT(!d.empty(), "auc of empty set");
  double acc = 0;
  for (std::size_t k = 0; k < steps; ++k) {
    const double th = max_t * double(k) / double(steps - 1);
    std::size_t ok = 0;
    for (double x : d) ok += x <= th;
    acc += double(ok) / double(d.size());
  }
  return 100 * acc / double(steps);
}

}  // namespace eqpose
