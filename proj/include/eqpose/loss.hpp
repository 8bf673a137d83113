#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "eqpose/autodiff.hpp"
#include "eqpose/errors.hpp"
#include "eqpose/geometry.hpp"
#include "eqpose/heads.hpp"

namespace eqpose {

inline constexpr double lambda_default() { return 0.1; }

template <class T>
struct LossBreakdown {
  T rec = 0;
  T reg = 0;
  T total = 0;
  std::size_t selected_j = 0;
  std::vector<T> distances;  // per hypothesis
};

/// Index of the smallest value; ties go to the lowest index. Throws on a
/// non-finite entry, naming the hypothesis.
template <class T>
std::size_t argmin_hypothesis(const std::vector<T>& d) {
  EQPOSE_EXPECT(!d.empty(), "argmin over zero hypotheses");
  std::size_t best = 0;
  for (std::size_t j = 0; j < d.size(); ++j) {
    if (!std::isfinite(d[j]))
      throw NumericalError("non-finite distance at hypothesis " +
                           std::to_string(j));
    if (d[j] < d[best]) best = j;
  }
  return best;
}

/// Chamfer between a constant cloud X and a taped cloud Y [m, 3].
template <class T>
ad::Var<T> chamfer_taped(const ad::Var<T>& X, const ad::Var<T>& Y,
                         DistanceMode mode) {
  ad::Var<T> D = ad::pairwise_sqdist(X, Y);
  ad::Var<T> fwd = ad::mean(ad::reduce_min(D, 1));
  if (mode == DistanceMode::partial) return fwd;
  return ad::add(fwd, ad::mean(ad::reduce_min(D, 0)));
}

template <class T>
ad::Var<T> cloud_var(ad::Tape<T>& tape, const Cloud<T>& X) {
  std::vector<T> v;
  v.reserve(3 * X.size());
  for (const auto& p : X) v.insert(v.end(), p.begin(), p.end());
  return tape.constant({X.size(), 3}, std::move(v));
}

template <class T>
Cloud<T> to_cloud(std::span<const T> v) {
  Cloud<T> out(v.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return out;
}

/// Distance between X and every hypothesis Y_j, untaped.
template <class T>
std::vector<T> hypothesis_distances(const Cloud<T>& X, const Cloud<T>& Z,
                                    const PoseHypothesisSet<T>& hyps,
                                    DistanceMode mode) {
  const auto rows = hyps.composed.value();
  const std::size_t n = hyps.composed.shape().at(0);
  std::vector<T> d(n);
  for (std::size_t j = 0; j < n; ++j)
    d[j] = cloud_distance(X, pose_apply_values(Z, rows.subspan(7 * j, 7)), mode);
  return d;
}

/// Mean over hypotheses of (|dq_j| - 1)^2.
template <class T>
ad::Var<T> residual_norm_penalty(const ad::Var<T>& residual) {
  ad::Var<T> dq = ad::slice_cols(residual, 0, 4);
  ad::Var<T> n = ad::sqrt(ad::reduce_sum(ad::square(dq), 1));
  return ad::mean(ad::square(ad::add_scalar(n, T(-1))));
}

template <class T>
struct TapedLoss {
  ad::Var<T> total;
  LossBreakdown<T> values;
};

/// Min-of-N reconstruction loss plus lambda times the residual penalty.
/// All 60 distances are evaluated off the tape; only the selected
/// hypothesis is rebuilt on the tape so gradients flow through it alone.
template <class T>
TapedLoss<T> min_of_n_loss(ad::Tape<T>& tape, const Cloud<T>& X,
                           const ad::Var<T>& Z, const PoseHypothesisSet<T>& hyps,
                           DistanceMode mode, T lambda) {
  EQPOSE_EXPECT(hyps.composed.shape().at(0) == kGroupOrder,
                "min_of_n_loss: expected 60 hypotheses");
  EQPOSE_EXPECT(lambda >= 0, "min_of_n_loss: lambda must be >= 0");
  TapedLoss<T> out;
  const Cloud<T> Zc = to_cloud(Z.value());
  out.values.distances = hypothesis_distances(X, Zc, hyps, mode);
  const std::size_t j = argmin_hypothesis(out.values.distances);
  out.values.selected_j = j;
  ad::Var<T> Y = pose_apply(Z, hyps, j);
  ad::Var<T> rec = chamfer_taped(cloud_var(tape, X), Y, mode);
  ad::Var<T> reg = residual_norm_penalty(hyps.residual);
  out.total = ad::add(rec, ad::scale(reg, lambda));
  out.values.rec = rec.item();
  out.values.reg = reg.item();
  out.values.total = out.total.item();
  if (!std::isfinite(out.values.total))
    throw NumericalError("non-finite loss at hypothesis " + std::to_string(j));
  return out;
}

}  // namespace eqpose
