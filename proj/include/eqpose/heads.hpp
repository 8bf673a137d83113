#pragma once

// Invariant canonical-shape head and equivariant 60-hypothesis pose head.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "eqpose/autodiff.hpp"
#include "eqpose/backbone.hpp"
#include "eqpose/errors.hpp"
#include "eqpose/params.hpp"
#include "eqpose/quaternion.hpp"
#include "eqpose/rotation_group.hpp"

namespace eqpose {

struct HeadConfig {
  std::size_t hidden = 64;        // MLP_rho and MLP_pi widths
  std::size_t shape_hidden = 128;  // hidden width of MLP_Z
  std::size_t n_z = 256;
  double dq_xyz_scale = 0.1;
  double leaky_slope = 0.2;
};

/// Lower bound of the activated residual w component, cos(pi / 10).
inline double residual_w_floor() { return std::cos(kPi / 10); }

/// Residual angle 2 acos(w) of an activated residual quaternion.
inline double residual_angle(double w) {
  return 2 * std::acos(std::min(1.0, w));
}

namespace ops {

/// sigmoid(x) - 0.5 kept strictly inside (-0.5, 0.5) even where the sigmoid
/// rounds to 0 or 1.
template <class T>
ad::Var<T> centered_sigmoid(const ad::Var<T>& a) {
  const T lim = std::nextafter(T(0.5), T(0));
  return ad::detail::unary(
      a,
      [lim](T x) {
        const T s = x >= 0 ? T(1) / (T(1) + std::exp(-x))
                           : std::exp(x) / (T(1) + std::exp(x));
        return std::clamp(s - T(0.5), -lim, lim);
      },
      [](T, T y) { return T(0.25) - y * y; });
}

/// Maps raw [60, 7] head outputs to (dq_w, dq_x, dq_y, dq_z, dt_x, dt_y,
/// dt_z) with dq_w = c + (1 - c) sigmoid(raw_w), c = cos(pi / 10), and
/// dq_xyz = xyz_scale * raw_xyz.
template <class T>
ad::Var<T> residual_activation(const ad::Var<T>& raw, T xyz_scale) {
  const auto& s = raw.shape();
  if (s.size() != 2 || s[1] != 7)
    throw ContractViolation("residual_activation: expected [n, 7], got " +
                            ad::to_string(s));
  const T c = static_cast<T>(residual_w_floor());
  const std::size_t n = s[0];
  const auto x = raw.value();
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < n; ++r) {
    const T v = x[7 * r];
    const T sg = v >= 0 ? T(1) / (T(1) + std::exp(-v))
                        : std::exp(v) / (T(1) + std::exp(v));
    out[7 * r] = c + (T(1) - c) * sg;
    for (std::size_t k = 1; k < 4; ++k) out[7 * r + k] = xyz_scale * x[7 * r + k];
    for (std::size_t k = 4; k < 7; ++k) out[7 * r + k] = x[7 * r + k];
  }
  const std::size_t ia = raw.id;
  return raw.tape->push(
      s, std::move(out), raw.requires_grad(),
      [ia, n, c, xyz_scale](ad::Tape<T>& t, std::size_t self) {
        if (!t.node(ia).requires_grad) return;
        auto& ga = t.grad(ia);
        const auto& g = t.node(self).grad;
        const auto& y = t.node(self).value;
        for (std::size_t r = 0; r < n; ++r) {
          const T sg = (y[7 * r] - c) / (T(1) - c);
          ga[7 * r] += g[7 * r] * (T(1) - c) * sg * (T(1) - sg);
          for (std::size_t k = 1; k < 4; ++k)
            ga[7 * r + k] += g[7 * r + k] * xyz_scale;
          for (std::size_t k = 4; k < 7; ++k) ga[7 * r + k] += g[7 * r + k];
        }
      });
}

/// Composes activated residuals [60, 7] with the group:
/// q_j = g_j dq_j and t_j = R(g_j) dt_j + t0.
template <class T>
ad::Var<T> compose_with_group(const ad::Var<T>& act, const RotationGroup& G,
                              const Vec3<T>& t0) {
  const auto& s = act.shape();
  if (s.size() != 2 || s[0] != kGroupOrder || s[1] != 7)
    throw ContractViolation("compose_with_group: expected [60, 7], got " +
                            ad::to_string(s));
  // Left multiplication by g as a 4x4 matrix, and the rotation matrix of g.
  std::array<std::array<T, 16>, kGroupOrder> L;
  std::array<std::array<T, 9>, kGroupOrder> R;
  for (std::size_t j = 0; j < kGroupOrder; ++j) {
    const auto& g = G[j];
    const T w = T(g.w), x = T(g.x), y = T(g.y), z = T(g.z);
    L[j] = {w, -x, -y, -z, x, w, -z, y, y, z, w, -x, z, -y, x, w};
    const auto m = g.matrix();
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) R[j][3 * r + c] = T(m[r][c]);
  }
  const auto a = act.value();
  std::vector<T> out(kGroupOrder * 7);
  for (std::size_t j = 0; j < kGroupOrder; ++j) {
    const T* in = a.data() + 7 * j;
    T* o = out.data() + 7 * j;
    for (std::size_t r = 0; r < 4; ++r)
      o[r] = L[j][4 * r] * in[0] + L[j][4 * r + 1] * in[1] +
             L[j][4 * r + 2] * in[2] + L[j][4 * r + 3] * in[3];
    for (std::size_t r = 0; r < 3; ++r)
      o[4 + r] = R[j][3 * r] * in[4] + R[j][3 * r + 1] * in[5] +
                 R[j][3 * r + 2] * in[6] + t0[r];
  }
  const std::size_t ia = act.id;
  return act.tape->push(
      s, std::move(out), act.requires_grad(),
      [ia, L, R](ad::Tape<T>& t, std::size_t self) {
        if (!t.node(ia).requires_grad) return;
        auto& ga = t.grad(ia);
        const auto& g = t.node(self).grad;
        for (std::size_t j = 0; j < kGroupOrder; ++j) {
          for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 4; ++c)
              ga[7 * j + c] += L[j][4 * r + c] * g[7 * j + r];
          for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 3; ++c)
              ga[7 * j + 4 + c] += R[j][3 * r + c] * g[7 * j + 4 + r];
        }
      });
}

}  // namespace ops

/// The 60 pose hypotheses of one input. Rows of `residual` are
/// (dq_w, dq_x, dq_y, dq_z, dt_x, dt_y, dt_z); rows of `composed` are
/// (q_w, q_x, q_y, q_z, t_x, t_y, t_z) with q unnormalized.
template <class T>
struct PoseHypothesisSet {
  ad::Var<T> residual;
  ad::Var<T> composed;
  Vec3<T> t0{};

  Quaternion<double> residual_rotation(std::size_t j) const {
    const auto v = residual.value();
    return {double(v[7 * j]), double(v[7 * j + 1]), double(v[7 * j + 2]),
            double(v[7 * j + 3])};
  }
  Vec3<double> residual_translation(std::size_t j) const {
    const auto v = residual.value();
    return {double(v[7 * j + 4]), double(v[7 * j + 5]), double(v[7 * j + 6])};
  }
  /// Composed pose j with its rotation normalized.
  RigidPose<double> pose(std::size_t j) const {
    const auto v = composed.value();
    const Quaternion<double> q{double(v[7 * j]), double(v[7 * j + 1]),
                               double(v[7 * j + 2]), double(v[7 * j + 3])};
    return {q.normalized(),
            {double(v[7 * j + 4]), double(v[7 * j + 5]), double(v[7 * j + 6])}};
  }
};

/// Y = R(q / |q|) Z + t for the composed pose row j.
template <class T>
ad::Var<T> pose_apply(const ad::Var<T>& Z, const PoseHypothesisSet<T>& hyps,
                      std::size_t j) {
  EQPOSE_EXPECT(j < kGroupOrder, "pose_apply: hypothesis index out of range");
  ad::Var<T> row = ad::gather(hyps.composed, {j});
  ad::Var<T> q = ad::slice_cols(row, 0, 4);
  ad::Var<T> t = ad::slice_cols(row, 4, 7);
  return ad::add_rowwise(ad::rotate_by_quaternion(q, Z), t);
}

/// Untaped version of pose_apply on plain values, same arithmetic as
/// rotate_by_quaternion.
template <class T>
Cloud<T> pose_apply_values(const Cloud<T>& Z, std::span<const T> row) {
  const T w = row[0], x = row[1], y = row[2], z = row[3];
  const T n2 = w * w + x * x + y * y + z * z;
  if (!(n2 > T(0))) throw NumericalError("pose_apply: zero quaternion");
  const std::array<T, 9> M{w * w + x * x - y * y - z * z, 2 * (x * y - w * z),
                           2 * (x * z + w * y),         2 * (x * y + w * z),
                           w * w - x * x + y * y - z * z, 2 * (y * z - w * x),
                           2 * (x * z - w * y),         2 * (y * z + w * x),
                           w * w - x * x - y * y + z * z};
  std::array<T, 9> R;
  for (std::size_t k = 0; k < 9; ++k) R[k] = M[k] / n2;
  Cloud<T> out(Z.size());
  for (std::size_t i = 0; i < Z.size(); ++i)
    for (std::size_t r = 0; r < 3; ++r)
      out[i][r] = (R[3 * r] * Z[i][0] + R[3 * r + 1] * Z[i][1] +
                   R[3 * r + 2] * Z[i][2]) +
                  row[4 + r];
  return out;
}

/// MLP_rho, max-pool over points and rotations, MLP_Z, sigmoid - 0.5.
template <class T>
class ShapeHead {
 public:
  ShapeHead() = default;
  ShapeHead(std::size_t channels, const HeadConfig& cfg, ParameterStore<T>& store,
            std::mt19937_64& rng)
      : cfg_(cfg) {
    rho1_ = Linear::create(store, "shape.rho1", channels, cfg.hidden, rng);
    rho2_ = Linear::create(store, "shape.rho2", cfg.hidden, cfg.hidden, rng);
    z1_ = Linear::create(store, "shape.z1", cfg.hidden, cfg.shape_hidden, rng);
    z2_ = Linear::create(store, "shape.z2", cfg.shape_hidden, cfg.n_z * 3, rng);
  }

  /// Canonical shape [N_Z, 3].
  ad::Var<T> operator()(ad::Tape<T>& tape, ParameterStore<T>& store,
                        const FeatureField<T>& f) const {
    const T slope = static_cast<T>(cfg_.leaky_slope);
    const std::size_t rows = f.size() * kGroupOrder;
    ad::Var<T> h = ad::reshape(f.features, {rows, f.channels()});
    h = ad::leaky_relu(rho1_(tape, store, h), slope);
    h = rho2_(tape, store, h);
    ad::Var<T> pooled = ad::reshape(ad::reduce_max(h, 0), {1, cfg_.hidden});
    ad::Var<T> z = ad::leaky_relu(z1_(tape, store, pooled), slope);
    z = ops::centered_sigmoid(z2_(tape, store, z));
    return ad::reshape(z, {cfg_.n_z, 3});
  }

  std::vector<std::size_t> parameter_ids() const {
    return {rho1_.weight, rho1_.bias, rho2_.weight, rho2_.bias,
            z1_.weight,   z1_.bias,   z2_.weight,   z2_.bias};
  }

 private:
  HeadConfig cfg_;
  Linear rho1_, rho2_, z1_, z2_;
};

/// MLP_pi, max-pool over points, per-rotation MLP_P to 7 raw values.
template <class T>
class PoseHead {
 public:
  PoseHead() = default;
  PoseHead(std::size_t channels, const HeadConfig& cfg, ParameterStore<T>& store,
           std::mt19937_64& rng)
      : cfg_(cfg) {
    pi1_ = Linear::create(store, "pose.pi1", channels, cfg.hidden, rng);
    pi2_ = Linear::create(store, "pose.pi2", cfg.hidden, cfg.hidden, rng);
    p1_ = Linear::create(store, "pose.p1", cfg.hidden, cfg.hidden, rng);
    p2_ = Linear::create(store, "pose.p2", cfg.hidden, 7, rng);
    // Start residuals small: zero raw xyz and translation, w at mid range.
    auto& w = store[p2_.weight];
    for (auto& v : w.data) v = static_cast<T>(0.1) * v;
  }

  /// Raw [60, 7] outputs before activation.
  ad::Var<T> raw(ad::Tape<T>& tape, ParameterStore<T>& store,
                 const FeatureField<T>& f) const {
    const T slope = static_cast<T>(cfg_.leaky_slope);
    const std::size_t n = f.size();
    ad::Var<T> h = ad::reshape(f.features, {n * kGroupOrder, f.channels()});
    h = ad::leaky_relu(pi1_(tape, store, h), slope);
    h = pi2_(tape, store, h);
    h = ad::reduce_max(ad::reshape(h, {n, kGroupOrder, cfg_.hidden}), 0);
    h = ad::leaky_relu(p1_(tape, store, h), slope);
    return p2_(tape, store, h);
  }

  /// `X` is the encoder input; its centroid is t0.
  PoseHypothesisSet<T> operator()(ad::Tape<T>& tape, ParameterStore<T>& store,
                                  const FeatureField<T>& f, const Cloud<T>& X,
                                  const RotationGroup& G) const {
    PoseHypothesisSet<T> hs;
    hs.residual = ops::residual_activation(raw(tape, store, f),
                                           static_cast<T>(cfg_.dq_xyz_scale));
    hs.t0 = centroid(X);
    hs.composed = ops::compose_with_group(hs.residual, G, hs.t0);
    return hs;
  }

 private:
  HeadConfig cfg_;
  Linear pi1_, pi2_, p1_, p2_;
};

}  // namespace eqpose
