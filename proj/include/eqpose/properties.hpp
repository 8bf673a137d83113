#pragma once

// Property battery behind `eqpose check-equiv`: group structure, discrete
// equivariance of the encoder and heads, residual bound, penalty zeros.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "eqpose/geometry.hpp"
#include "eqpose/heads.hpp"
#include "eqpose/loss.hpp"
#include "eqpose/model.hpp"
#include "eqpose/rotation_group.hpp"

namespace eqpose {

struct PropertyResult {
  std::string name;
  double measured = 0;
  double tolerance = 0;
  bool passed = false;
};

/// Number of elements per rotation angle (degrees, rounded).
inline std::map<int, std::size_t> angle_census(const RotationGroup& G) {
  std::map<int, std::size_t> c;
  for (std::size_t j = 0; j < G.size(); ++j)
    ++c[static_cast<int>(std::lround(degrees(rotation_angle(G[j]))))];
  return c;
}

/// Count of census entries differing from {0:1, 72:12, 120:20, 144:12, 180:15}.
inline std::size_t census_mismatches(const RotationGroup& G) {
  const std::map<int, std::size_t> want{{0, 1}, {72, 12}, {120, 20}, {144, 12}, {180, 15}};
  const auto got = angle_census(G);
  std::size_t bad = 0;
  for (const auto& [deg, n] : want) bad += got.count(deg) ? got.at(deg) != n : 1;
  for (const auto& [deg, n] : got) bad += !want.count(deg);
  return bad;
}

/// Violations of closure, identity, inverse and all 60^3 associativity
/// triples of the Cayley table, plus disagreements with the Hamilton product.
inline std::size_t cayley_violations(const RotationGroup& G) {
  const std::size_t n = G.size();
  std::size_t bad = 0;
  for (std::size_t a = 0; a < n; ++a) {
    std::vector<bool> seen(n, false);
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t ab = G.cayley[a][b];
      if (ab >= n) {
        ++bad;
        continue;
      }
      if (seen[ab]) ++bad;
      seen[ab] = true;
      if (geodesic_angle(G[ab], compose(G[a], G[b])) > 1e-9) ++bad;
    }
    if (G.cayley[0][a] != a || G.cayley[a][0] != a) ++bad;
    if (G.cayley[a][G.inverse[a]] != 0 || G.cayley[G.inverse[a]][a] != 0) ++bad;
  }
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < n; ++c)
        if (G.cayley[G.cayley[a][b]][c] != G.cayley[a][G.cayley[b][c]]) ++bad;
  return bad;
}

struct EquivarianceStats {
  double encoder_rel = 0;     // max |enc(AX) - P enc(X)| / max |enc(X)|
  double shape_chamfer = 0;   // chamfer(Z(X), Z(AX))
  double pose_r_deg = 0;      // hypothesis sigma(j) of AX versus A o hypothesis j of X
  double pose_t = 0;
  double residual_w = 0;      // residual w of sigma(j) versus j
  std::size_t cases = 0;
};

/// Runs `clouds` random clouds through a model with random weights, each
/// against every group index in `rotations`. With `translate` the moved
/// input also gets a translation drawn from [-1, 1]^3.
template <class T>
EquivarianceStats measure_equivariance(const ModelConfig& cfg, std::uint64_t seed,
                                       std::size_t clouds,
                                       const std::vector<std::size_t>& rotations,
                                       bool translate) {
  const RotationGroup& G = icosahedral_group();
  Model<T> model(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(-0.5, 0.5), ut(-1, 1);
  const std::size_t n = cfg.encoder.input_points;
  const std::size_t C = cfg.encoder.output_channels();
  EquivarianceStats s;
  for (std::size_t c = 0; c < clouds; ++c) {
    Cloud<double> X(n);
    for (auto& p : X) p = {u(rng), u(rng), u(rng)};
    ad::Tape<T> tape;
    const auto base = model.forward(tape, cloud_cast<T>(X));
    const auto f0 = base.field.features.value();
    double scale = 0;
    for (T v : f0) scale = std::max(scale, std::abs(double(v)));
    const Cloud<double> Z0 = cloud_cast<double>(to_cloud(base.shape.value()));
    const std::size_t m = base.field.features.shape()[0];
    for (std::size_t a : rotations) {
      RigidPose<double> A{G[a], {0, 0, 0}};
      if (translate) A.translation = {ut(rng), ut(rng), ut(rng)};
      ad::Tape<T> t2;
      const auto moved = model.forward(t2, cloud_cast<T>(A.apply(X)));
      const auto sigma = G.permutation_of(a);
      const auto want = permute_rotations(f0, m, C, sigma);
      const auto got = moved.field.features.value();
      double err = 0;
      for (std::size_t i = 0; i < got.size(); ++i)
        err = std::max(err, std::abs(double(got[i]) - double(want[i])));
      s.encoder_rel = std::max(s.encoder_rel, err / std::max(scale, 1e-30));
      s.shape_chamfer = std::max(
          s.shape_chamfer,
          chamfer_bidirectional(Z0, cloud_cast<double>(to_cloud(moved.shape.value()))));
      for (std::size_t j = 0; j < G.size(); ++j) {
        const auto p = base.hypotheses.pose(j);
        const auto pm = moved.hypotheses.pose(sigma[j]);
        s.pose_r_deg = std::max(
            s.pose_r_deg, degrees(geodesic_angle(pm.rotation, compose(A.rotation, p.rotation))));
        s.pose_t = std::max(s.pose_t, norm(pm.translation - A.apply(p.translation)));
        s.residual_w = std::max(
            s.residual_w, std::abs(moved.hypotheses.residual_rotation(sigma[j]).w -
                                   base.hypotheses.residual_rotation(j).w));
      }
      ++s.cases;
    }
  }
  return s;
}

/// Largest residual angle 2 acos(w) in degrees over `count` raw rows drawn
/// from a mix of scales, including extreme magnitudes.
inline double max_residual_angle_deg(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  const double scales[] = {1e-3, 1, 10, 1e3, 1e8};
  std::vector<double> raw(7 * count);
  for (std::size_t r = 0; r < count; ++r)
    for (std::size_t k = 0; k < 7; ++k) raw[7 * r + k] = scales[r % 5] * nd(rng);
  ad::Tape<double> tape;
  const auto a = ops::residual_activation(tape.constant({count, 7}, raw), 0.1).value();
  double worst = 0;
  for (std::size_t r = 0; r < count; ++r) {
    worst = std::max(worst, degrees(residual_angle(a[7 * r])));
  }
  return worst;
}

/// Worst violation of "penalty is zero iff every |dq| = 1": the penalty on
/// unit rows (should be 0) and the smallest penalty on rows off the unit
/// sphere by at least 1e-9 relative (should be positive).
struct PenaltyZeroCheck {
  double unit_penalty = 0;
  double min_off_unit_penalty = 0;
};

inline PenaltyZeroCheck penalty_zero_check(std::size_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> off(1e-9, 0.5);
  PenaltyZeroCheck r;
  r.min_off_unit_penalty = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> unit(7 * 60), moved(7 * 60);
    for (std::size_t j = 0; j < 60; ++j) {
      Quaternion<double> q{nd(rng), nd(rng), nd(rng), nd(rng)};
      q = q.normalized();
      const double qs[4] = {q.w, q.x, q.y, q.z};
      const double f = (t + j) % 2 ? 1 + off(rng) : 1 - off(rng);
      for (std::size_t k = 0; k < 4; ++k) {
        unit[7 * j + k] = qs[k];
        moved[7 * j + k] = j == 0 ? qs[k] * f : qs[k];
      }
      for (std::size_t k = 4; k < 7; ++k) unit[7 * j + k] = moved[7 * j + k] = nd(rng);
    }
    ad::Tape<double> tape;
    r.unit_penalty = std::max(
        r.unit_penalty, residual_norm_penalty(tape.constant({60, 7}, unit)).item());
    r.min_off_unit_penalty = std::min(
        r.min_off_unit_penalty, residual_norm_penalty(tape.constant({60, 7}, moved)).item());
  }
  return r;
}

inline std::vector<std::size_t> all_group_indices() {
  std::vector<std::size_t> v(RotationGroup::kOrder);
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = j;
  return v;
}

/// Full battery at the given model configuration. `clouds` random clouds are
/// checked against all 60 rotations in both precisions.
inline std::vector<PropertyResult> run_property_battery(const ModelConfig& cfg,
                                                        std::uint64_t seed,
                                                        std::size_t clouds) {
  const RotationGroup& G = icosahedral_group();
  std::vector<PropertyResult> out;
  auto add = [&](std::string name, double measured, double tol) {
    out.push_back({std::move(name), measured, tol, measured <= tol});
  };
  add("group.angle_census_mismatches", double(census_mismatches(G)), 0);
  add("group.cayley_violations", double(cayley_violations(G)), 0);
  const auto rots = all_group_indices();
  const auto s64 = measure_equivariance<double>(cfg, seed, clouds, rots, true);
  const auto s32 = measure_equivariance<float>(cfg, seed, clouds, rots, true);
  add("encoder.equivariance_rel.fp64", s64.encoder_rel, 1e-8);
  add("encoder.equivariance_rel.fp32", s32.encoder_rel, 1e-4);
  add("shape.invariance_chamfer.fp64", s64.shape_chamfer, 1e-6);
  add("pose.rotation_deg.fp64", s64.pose_r_deg, 0.1);
  add("pose.translation.fp64", s64.pose_t, 1e-5);
  add("pose.rotation_deg.fp32", s32.pose_r_deg, 0.1);
  add("pose.translation.fp32", s32.pose_t, 1e-5);
  add("pose.residual_w_permutation.fp64", s64.residual_w, 1e-9);
  add("residual.max_angle_deg", max_residual_angle_deg(100000, seed), 36 + 1e-4);
  const auto pz = penalty_zero_check(100, seed);
  add("penalty.unit_rows", pz.unit_penalty, 1e-15);
  // Reported as a negative margin so "measured <= tolerance" means positive.
  add("penalty.off_unit_rows_negated", -pz.min_off_unit_penalty, 0);
  out.back().passed = pz.min_off_unit_penalty > 0;
  return out;
}

}  // namespace eqpose
