#pragma once

// SE(3)-equivariant point encoder.
//
// Features are stored point-major as [n, 60, C]: entry (i, j, c) is channel c
// of point i under group rotation j. Rotating the input by group element g
// maps the feature at rotation j to rotation cayley[g][j].

#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "eqpose/autodiff.hpp"
#include "eqpose/errors.hpp"
#include "eqpose/geometry.hpp"
#include "eqpose/params.hpp"
#include "eqpose/quaternion.hpp"
#include "eqpose/rotation_group.hpp"

namespace eqpose {

inline constexpr std::size_t kGroupOrder = RotationGroup::kOrder;
inline constexpr std::size_t kKernelPoints = 13;

struct LayerConfig {
  std::size_t points = 0;    // downsample target
  std::size_t channels = 0;  // output channels
  double radius = 0;         // neighbourhood radius
  std::size_t max_neighbors = 32;
};

struct EncoderConfig {
  std::size_t input_points = 256;
  std::vector<LayerConfig> layers;
  double leaky_slope = 0.2;

  /// 256 -> 128 -> 64 -> 32 points, channels 16/32/32.
  static EncoderConfig desk_default() {
    return {256, {{128, 16, 0.12, 32}, {64, 32, 0.25, 32}, {32, 32, 0.5, 32}},
            0.2};
  }

  /// Five layers, 1024 input points down to 64, 128 output channels.
  static EncoderConfig full_scale() {
    return {1024,
            {{512, 32, 0.08, 32},
             {256, 64, 0.15, 32},
             {128, 64, 0.25, 32},
             {96, 128, 0.4, 32},
             {64, 128, 0.6, 32}},
            0.2};
  }

  std::size_t output_channels() const { return layers.back().channels; }
  std::size_t output_points() const { return layers.back().points; }

  /// Returns a list of violations; empty when valid.
  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (layers.empty()) v.push_back("encoder.layers must not be empty");
    std::size_t prev = input_points;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      const std::string at = "encoder.layers[" + std::to_string(l) + "]";
      if (L.points >= prev)
        v.push_back(at + ".points must be strictly below the previous level");
      if (L.channels == 0) v.push_back(at + ".channels must be positive");
      if (!(L.radius > 0)) v.push_back(at + ".radius must be positive");
      if (L.max_neighbors == 0)
        v.push_back(at + ".max_neighbors must be positive");
      prev = L.points;
    }
    if (!layers.empty() && layers.back().points < 16)
      v.push_back("encoder final point count must be at least 16");
    if (!(leaky_slope >= 0)) v.push_back("encoder.leaky_slope must be >= 0");
    return v;
  }
};

/// Kernel point layout shared by all point convolutions: a center point and
/// the 12 icosahedron vertices at radius sigma, with linear influence
/// max(0, 1 - d / sigma).
struct KernelSpec {
  double sigma = 0;
  std::array<Vec3<double>, kKernelPoints> points{};
  // rotated_slot[j][k]: index m with g_j * points[k] == points[m].
  std::array<std::array<std::size_t, kKernelPoints>, kGroupOrder> rotated_slot{};

  static KernelSpec create(double sigma, const RotationGroup& G) {
    KernelSpec K;
    K.sigma = sigma;
    K.points[0] = {0, 0, 0};
    const auto verts = G.icosahedron_vertices();
    if (verts.size() != kKernelPoints - 1)
      throw std::logic_error("expected 12 icosahedron vertices");
    for (std::size_t k = 0; k < verts.size(); ++k)
      K.points[k + 1] = sigma * verts[k];
    for (std::size_t j = 0; j < kGroupOrder; ++j) {
      for (std::size_t k = 0; k < kKernelPoints; ++k) {
        const Vec3<double> r = G[j].rotate(K.points[k]);
        std::size_t match = kKernelPoints;
        for (std::size_t m = 0; m < kKernelPoints; ++m)
          if (squared_distance(r, K.points[m]) < 1e-12 * sigma * sigma) match = m;
        if (match == kKernelPoints)
          throw std::logic_error("kernel layout is not closed under the group");
        K.rotated_slot[j][k] = match;
      }
    }
    return K;
  }

  /// Influence of an offset on each unrotated kernel point.
  template <class T>
  std::array<T, kKernelPoints> influence(const Vec3<T>& offset) const {
    std::array<T, kKernelPoints> w{};
    const T s = static_cast<T>(sigma);
    for (std::size_t m = 0; m < kKernelPoints; ++m) {
      const Vec3<T> kp{static_cast<T>(points[m][0]), static_cast<T>(points[m][1]),
                       static_cast<T>(points[m][2])};
      const T d = std::sqrt(squared_distance(offset, kp));
      w[m] = std::max(T(0), T(1) - d / s);
    }
    return w;
  }
};

template <class T>
struct FeatureField {
  Cloud<T> points;
  ad::Var<T> features;  // [n, 60, C]

  std::size_t size() const { return points.size(); }
  std::size_t channels() const { return features.shape().at(2); }
  T at(std::size_t i, std::size_t c, std::size_t j) const {
    return features.value()[(i * kGroupOrder + j) * channels() + c];
  }
};

/// Feature values with the rotation axis permuted: out[i, sigma(j)] = in[i, j].
template <class T>
std::vector<T> permute_rotations(std::span<const T> features, std::size_t n,
                                 std::size_t channels,
                                 const RotationGroup::Permutation& sigma) {
  std::vector<T> out(features.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < kGroupOrder; ++j)
      for (std::size_t c = 0; c < channels; ++c)
        out[(i * kGroupOrder + sigma[j]) * channels + c] =
            features[(i * kGroupOrder + j) * channels + c];
  return out;
}

/// Constant-one single-channel field on raw points.
template <class T>
FeatureField<T> lift(ad::Tape<T>& tape, const Cloud<T>& points) {
  return {points, tape.constant({points.size(), kGroupOrder, 1},
                                std::vector<T>(points.size() * kGroupOrder, T(1)))};
}

namespace detail {

struct InfluenceEntry {
  std::size_t point;  // index into the input level
  std::size_t slot;   // unrotated kernel point
};

// A[c, j, m, :] = sum over entries of center c with slot m of
// w * f[point, j, :]. Output shape [n_out, 60, 13, C].
template <class T>
ad::Var<T> kernel_aggregate(const ad::Var<T>& f,
                            std::vector<std::vector<InfluenceEntry>> entries,
                            std::vector<std::vector<T>> weights) {
  const std::size_t n_out = entries.size();
  const std::size_t C = f.shape().at(2);
  const auto x = f.value();
  std::vector<T> out(n_out * kGroupOrder * kKernelPoints * C, T(0));
  for (std::size_t c = 0; c < n_out; ++c)
    for (std::size_t e = 0; e < entries[c].size(); ++e) {
      const auto [i, m] = entries[c][e];
      const T w = weights[c][e];
      for (std::size_t j = 0; j < kGroupOrder; ++j) {
        const T* src = x.data() + (i * kGroupOrder + j) * C;
        T* dst = out.data() + ((c * kGroupOrder + j) * kKernelPoints + m) * C;
        for (std::size_t ch = 0; ch < C; ++ch) dst[ch] += w * src[ch];
      }
    }
  const std::size_t iff = f.id;
  return f.tape->push(
      {n_out, kGroupOrder, kKernelPoints, C}, std::move(out), f.requires_grad(),
      [iff, C, entries = std::move(entries), weights = std::move(weights)](
          ad::Tape<T>& t, std::size_t self) {
        if (!t.node(iff).requires_grad) return;
        auto& gf = t.grad(iff);
        const auto& g = t.node(self).grad;
        for (std::size_t c = 0; c < entries.size(); ++c)
          for (std::size_t e = 0; e < entries[c].size(); ++e) {
            const auto [i, m] = entries[c][e];
            const T w = weights[c][e];
            for (std::size_t j = 0; j < kGroupOrder; ++j) {
              T* dst = gf.data() + (i * kGroupOrder + j) * C;
              const T* src =
                  g.data() + ((c * kGroupOrder + j) * kKernelPoints + m) * C;
              for (std::size_t ch = 0; ch < C; ++ch) dst[ch] += w * src[ch];
            }
          }
      });
}

}  // namespace detail

/// Rotated-kernel point convolution from `in` onto `centers`.
///
/// out(c, j) = sum_k W_k^T sum_i infl(x_i - c, g_j k) f(x_i, j), with
/// `neighbors[c]` indexing `in.points`. `weights` has shape
/// [13, C_in, C_out].
template <class T>
FeatureField<T> point_conv(const FeatureField<T>& in, const Cloud<T>& centers,
                           const std::vector<std::vector<std::size_t>>& neighbors,
                           const KernelSpec& kernel, const ad::Var<T>& weights) {
  EQPOSE_EXPECT(neighbors.size() == centers.size(),
                "point_conv: one neighbour list per center required");
  const std::size_t C_in = in.channels();
  const auto& ws = weights.shape();
  if (ws.size() != 3 || ws[0] != kKernelPoints || ws[1] != C_in)
    throw ContractViolation("point_conv: shape mismatch weights " +
                            ad::to_string(ws) + " vs input channels " +
                            std::to_string(C_in));
  const std::size_t C_out = ws[2];
  const std::size_t n_out = centers.size();

  std::vector<std::vector<detail::InfluenceEntry>> entries(n_out);
  std::vector<std::vector<T>> infl(n_out);
  for (std::size_t c = 0; c < n_out; ++c)
    for (std::size_t i : neighbors[c]) {
      const auto w = kernel.influence(in.points.at(i) - centers[c]);
      for (std::size_t m = 0; m < kKernelPoints; ++m)
        if (w[m] > T(0)) {
          entries[c].push_back({i, m});
          infl[c].push_back(w[m]);
        }
    }
  ad::Var<T> A =
      detail::kernel_aggregate(in.features, std::move(entries), std::move(infl));

  // Rotated kernel k under rotation j reads unrotated slot rotated_slot[j][k].
  std::vector<std::size_t> rows;
  rows.reserve(n_out * kGroupOrder * kKernelPoints);
  for (std::size_t c = 0; c < n_out; ++c)
    for (std::size_t j = 0; j < kGroupOrder; ++j)
      for (std::size_t k = 0; k < kKernelPoints; ++k)
        rows.push_back((c * kGroupOrder + j) * kKernelPoints +
                       kernel.rotated_slot[j][k]);
  ad::Var<T> B = ad::gather(
      ad::reshape(A, {n_out * kGroupOrder * kKernelPoints, C_in}), std::move(rows));
  B = ad::reshape(B, {n_out * kGroupOrder, kKernelPoints * C_in});
  ad::Var<T> out =
      ad::matmul(B, ad::reshape(weights, {kKernelPoints * C_in, C_out}));
  return {centers, ad::reshape(out, {n_out, kGroupOrder, C_out})};
}

/// Relative elements used by group convolution: identity followed by the 12
/// rotations of angle 2*pi/5.
inline std::vector<std::size_t> group_conv_neighborhood(const RotationGroup& G) {
  std::vector<std::size_t> R{0};
  for (std::size_t j : G.order_five_elements()) R.push_back(j);
  return R;
}

/// out(i, j) = sum_r W_r^T f(i, g_j * g_r) with weights [|R|, C_in, C_out].
template <class T>
FeatureField<T> group_conv(const FeatureField<T>& in, const RotationGroup& G,
                           const ad::Var<T>& weights) {
  const std::vector<std::size_t> R = group_conv_neighborhood(G);
  const std::size_t C = in.channels();
  const auto& ws = weights.shape();
  if (ws.size() != 3 || ws[0] != R.size() || ws[1] != C)
    throw ContractViolation("group_conv: shape mismatch weights " +
                            ad::to_string(ws) + " vs input channels " +
                            std::to_string(C));
  const std::size_t C_out = ws[2];
  const std::size_t n = in.size();
  std::vector<std::size_t> rows;
  rows.reserve(n * kGroupOrder * R.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < kGroupOrder; ++j)
      for (std::size_t r : R) rows.push_back(i * kGroupOrder + G.cayley[j][r]);
  ad::Var<T> B =
      ad::gather(ad::reshape(in.features, {n * kGroupOrder, C}), std::move(rows));
  B = ad::reshape(B, {n * kGroupOrder, R.size() * C});
  ad::Var<T> out = ad::matmul(B, ad::reshape(weights, {R.size() * C, C_out}));
  return {in.points, ad::reshape(out, {n, kGroupOrder, C_out})};
}

/// Downsampling indices and neighbourhoods for every encoder layer. Computed
/// once from a cloud and reusable for rigidly moved copies of it.
struct EncoderPlan {
  struct Level {
    std::vector<std::size_t> sample;                  // into previous level
    std::vector<std::vector<std::size_t>> neighbors;  // into previous level
  };
  std::vector<Level> levels;
};

template <class T>
EncoderPlan make_plan(const Cloud<T>& X, const EncoderConfig& cfg) {
  EQPOSE_EXPECT(!cfg.layers.empty(), "encoder config has no layers");
  EQPOSE_EXPECT(X.size() >= cfg.layers.back().points,
                "encode: input has " + std::to_string(X.size()) +
                    " points, fewer than the final target " +
                    std::to_string(cfg.layers.back().points));
  EQPOSE_EXPECT(X.size() == cfg.input_points,
                "encode: input has " + std::to_string(X.size()) +
                    " points, config expects " + std::to_string(cfg.input_points));
  EncoderPlan plan;
  Cloud<double> prev = cloud_cast<double>(X);
  for (const auto& L : cfg.layers) {
    EncoderPlan::Level lv;
    lv.sample = farthest_point_sampling(prev, L.points);
    Cloud<double> centers = select(prev, lv.sample);
    lv.neighbors = neighborhoods(centers, prev, L.radius, L.max_neighbors).index;
    plan.levels.push_back(std::move(lv));
    prev = std::move(centers);
  }
  return plan;
}

template <class T>
class Encoder {
 public:
  struct LayerParams {
    std::size_t conv, norm1_gamma, norm1_beta, group, norm2_gamma, norm2_beta;
  };

  Encoder() = default;
  Encoder(EncoderConfig cfg, const RotationGroup& G, ParameterStore<T>& store,
          std::mt19937_64& rng)
      : cfg_(std::move(cfg)), G_(&G) {
    const auto bad = cfg_.violations();
    if (!bad.empty()) throw ContractViolation("invalid encoder config: " + bad[0]);
    std::size_t c_in = 1;
    for (std::size_t l = 0; l < cfg_.layers.size(); ++l) {
      const auto& L = cfg_.layers[l];
      const std::string p = "encoder." + std::to_string(l) + ".";
      const std::size_t C = L.channels;
      LayerParams lp;
      lp.conv = store.add_normal(p + "conv", {kKernelPoints, c_in, C},
                                 std::sqrt(2.0 / double(kKernelPoints * c_in)), rng);
      lp.norm1_gamma = store.add_constant(p + "norm1.gamma", {C}, T(1));
      lp.norm1_beta = store.add_constant(p + "norm1.beta", {C}, T(0));
      const std::size_t nR = group_conv_neighborhood(G).size();
      lp.group = store.add_normal(p + "group", {nR, C, C},
                                  std::sqrt(2.0 / double(nR * C)), rng);
      lp.norm2_gamma = store.add_constant(p + "norm2.gamma", {C}, T(1));
      lp.norm2_beta = store.add_constant(p + "norm2.beta", {C}, T(0));
      layers_.push_back(lp);
      kernels_.push_back(KernelSpec::create(L.radius / 2, G));
      c_in = C;
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  const KernelSpec& kernel(std::size_t l) const { return kernels_.at(l); }

  FeatureField<T> encode(ad::Tape<T>& tape, ParameterStore<T>& store,
                         const Cloud<T>& X) const {
    return encode(tape, store, X, make_plan(X, cfg_));
  }

  FeatureField<T> encode(ad::Tape<T>& tape, ParameterStore<T>& store,
                         const Cloud<T>& X, const EncoderPlan& plan) const {
    EQPOSE_EXPECT(X.size() == cfg_.input_points,
                  "encode: input has " + std::to_string(X.size()) +
                      " points, config expects " +
                      std::to_string(cfg_.input_points));
    EQPOSE_EXPECT(plan.levels.size() == cfg_.layers.size(),
                  "encode: plan does not match encoder depth");
    const T slope = static_cast<T>(cfg_.leaky_slope);
    FeatureField<T> f = lift(tape, X);
    for (std::size_t l = 0; l < cfg_.layers.size(); ++l) {
      const auto& lp = layers_[l];
      const auto& lv = plan.levels[l];
      const std::size_t C = cfg_.layers[l].channels;
      Cloud<T> centers = select(f.points, lv.sample);
      FeatureField<T> h = point_conv(f, centers, lv.neighbors, kernels_[l],
                                     tape.param(store[lp.conv]));
      const std::size_t n = centers.size();
      ad::Var<T> v = ad::reshape(h.features, {n * kGroupOrder, C});
      v = ad::standardize_columns(v, tape.param(store[lp.norm1_gamma]),
                                  tape.param(store[lp.norm1_beta]));
      v = ad::leaky_relu(v, slope);
      h.features = ad::reshape(v, {n, kGroupOrder, C});
      h = group_conv(h, *G_, tape.param(store[lp.group]));
      v = ad::reshape(h.features, {n * kGroupOrder, C});
      v = ad::standardize_columns(v, tape.param(store[lp.norm2_gamma]),
                                  tape.param(store[lp.norm2_beta]));
      v = ad::leaky_relu(v, slope);
      f = {std::move(centers), ad::reshape(v, {n, kGroupOrder, C})};
    }
    return f;
  }

 private:
  EncoderConfig cfg_;
  const RotationGroup* G_ = nullptr;
  std::vector<LayerParams> layers_;
  std::vector<KernelSpec> kernels_;
};

}  // namespace eqpose
