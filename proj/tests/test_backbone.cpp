#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "eqpose/backbone.hpp"
#include "eqpose/synth.hpp"
#include "test_util.hpp"

using namespace eqpose;

namespace {

const RotationGroup& G() { return icosahedral_group(); }

EncoderConfig small_config() {
  return {64, {{32, 8, 0.35, 16}, {16, 8, 0.7, 16}}, 0.2};
}

template <class T>
std::vector<T> encode_values(const Encoder<T>& enc, ParameterStore<T>& store,
                             const Cloud<T>& X, const EncoderPlan& plan,
                             Cloud<T>* points = nullptr) {
  ad::Tape<T> tape;
  auto f = enc.encode(tape, store, X, plan);
  if (points) *points = f.points;
  return {f.features.value().begin(), f.features.value().end()};
}

template <class T>
Cloud<T> rotate_cloud(const Cloud<T>& X, const Quaternion<double>& q) {
  return cloud_cast<T>(RigidPose<double>{q, {0, 0, 0}}.apply(cloud_cast<double>(X)));
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / den;
}

template <class T>
std::vector<double> widen(const std::vector<T>& v) {
  return {v.begin(), v.end()};
}

}  // namespace

TEST(KernelSpec, VerticesAtSigmaAndSlotsArePermutations) {
  const auto K = KernelSpec::create(0.3, G());
  EXPECT_EQ(norm(K.points[0]), 0.0);
  for (std::size_t k = 1; k < kKernelPoints; ++k)
    EXPECT_NEAR(norm(K.points[k]), 0.3, 1e-9);
  for (std::size_t j = 0; j < kGroupOrder; ++j) {
    std::vector<bool> seen(kKernelPoints, false);
    EXPECT_EQ(K.rotated_slot[j][0], 0u);
    for (std::size_t k = 0; k < kKernelPoints; ++k) {
      const auto m = K.rotated_slot[j][k];
      EXPECT_FALSE(seen[m]);
      seen[m] = true;
      EXPECT_LT(squared_distance(G()[j].rotate(K.points[k]), K.points[m]), 1e-20);
    }
  }
  for (std::size_t k = 0; k < kKernelPoints; ++k) EXPECT_EQ(K.rotated_slot[0][k], k);
}

TEST(KernelSpec, InfluenceExamples) {
  const auto K = KernelSpec::create(0.2, G());
  const auto w0 = K.influence(Vec3<double>{0, 0, 0});
  EXPECT_EQ(w0[0], 1.0);
  for (std::size_t m = 1; m < kKernelPoints; ++m) EXPECT_NEAR(w0[m], 0.0, 1e-15);
  const auto w1 = K.influence(K.points[3]);
  EXPECT_NEAR(w1[0], 0.0, 1e-15);
  EXPECT_NEAR(w1[3], 1.0, 1e-15);
  const auto w2 = K.influence(Vec3<double>{0.05, 0, 0});
  EXPECT_NEAR(w2[0], 0.75, 1e-15);
}

TEST(PointConv, LoneCenterGivesCenterWeightRow) {
  ad::Tape<double> tape;
  const Cloud<double> pts{{0.2, -0.1, 0.4}};
  auto in = lift(tape, pts);
  const auto K = KernelSpec::create(0.1, G());
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  std::vector<double> w(kKernelPoints * 5);
  for (auto& v : w) v = nd(rng);
  auto W = tape.constant({kKernelPoints, 1, 5}, w);
  const auto out = point_conv(in, pts, {{0}}, K, W);
  ASSERT_EQ(out.features.shape(), (ad::Shape{1, 60, 5}));
  for (std::size_t j = 0; j < kGroupOrder; ++j)
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(out.at(0, c, j), w[c], 1e-14);
}

TEST(PointConv, ShapeErrorNamesBothShapes) {
  ad::Tape<double> tape;
  const Cloud<double> pts{{0, 0, 0}};
  auto in = lift(tape, pts);
  auto W = tape.constant({kKernelPoints, 2, 5}, std::vector<double>(kKernelPoints * 10));
  try {
    point_conv(in, pts, {{0}}, KernelSpec::create(0.1, G()), W);
    FAIL();
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("[13,2,5]"), std::string::npos) << e.what();
  }
}

TEST(PointConv, RotationPermutesOutput) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  const auto K = KernelSpec::create(0.25, G());
  for (int trial = 0; trial < 5; ++trial) {
    const auto X = test::random_cloud<double>(rng, 40, 0.4);
    const auto nb = neighborhoods(X, 0.5, 40).index;
    std::vector<double> w(kKernelPoints * 3);
    for (auto& v : w) v = nd(rng);
    ad::Tape<double> tape;
    auto W = tape.constant({kKernelPoints, 1, 3}, w);
    const auto base = point_conv(lift(tape, X), X, nb, K, W);
    for (std::size_t a = 0; a < kGroupOrder; a += 7) {
      const auto Xr = rotate_cloud(X, G()[a]);
      const auto rot = point_conv(lift(tape, Xr), Xr, nb, K, W);
      const auto expect = permute_rotations(base.features.value(), X.size(), 3,
                                            G().permutation_of(a));
      EXPECT_LT(rel_err(widen(std::vector<double>(rot.features.value().begin(),
                                                  rot.features.value().end())),
                        expect),
                1e-12);
    }
  }
}

TEST(PointConv, TranslationOfDyadicCloudIsBitwiseInvariant) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> u(-32, 32);
  Cloud<double> X(40);
  for (auto& p : X) p = {u(rng) / 64.0, u(rng) / 64.0, u(rng) / 64.0};
  Cloud<double> Xt = X;
  for (auto& p : Xt) p = p + Vec3<double>{1, 2, 3};
  const auto K = KernelSpec::create(0.25, G());
  const auto nb = neighborhoods(X, 0.5, 40).index;
  std::normal_distribution<double> nd;
  std::vector<double> w(kKernelPoints * 3);
  for (auto& v : w) v = nd(rng);
  ad::Tape<double> tape;
  auto W = tape.constant({kKernelPoints, 1, 3}, w);
  const auto a = point_conv(lift(tape, X), X, nb, K, W);
  const auto b = point_conv(lift(tape, Xt), Xt, nb, K, W);
  for (std::size_t i = 0; i < a.features.size(); ++i)
    EXPECT_EQ(a.features.value()[i], b.features.value()[i]);
}

TEST(GroupConv, IdentityWeightsReproduceInput) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  const std::size_t n = 3, C = 4;
  std::vector<double> x(n * kGroupOrder * C);
  for (auto& v : x) v = nd(rng);
  ad::Tape<double> tape;
  FeatureField<double> f{Cloud<double>(n), tape.constant({n, kGroupOrder, C}, x)};
  std::vector<double> w(13 * C * C, 0.0);
  for (std::size_t c = 0; c < C; ++c) w[c * C + c] = 1.0;
  const auto out = group_conv(f, G(), tape.constant({13, C, C}, w));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(out.features.value()[i], x[i]);
}

TEST(GroupConv, NeighbourhoodIsIdentityPlusTwelveFifthTurns) {
  const auto R = group_conv_neighborhood(G());
  ASSERT_EQ(R.size(), 13u);
  EXPECT_EQ(R[0], 0u);
  for (std::size_t k = 1; k < R.size(); ++k)
    EXPECT_NEAR(degrees(rotation_angle(G()[R[k]])), 72.0, 1e-9);
}

TEST(GroupConv, SupportFollowsCayleyTable) {
  const std::size_t C = 1;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  std::vector<double> w(13);
  for (auto& v : w) v = 1.0 + std::abs(nd(rng));
  const auto R = group_conv_neighborhood(G());
  for (std::size_t hot = 0; hot < kGroupOrder; hot += 11) {
    std::vector<double> x(kGroupOrder, 0.0);
    x[hot] = 1.0;
    ad::Tape<double> tape;
    FeatureField<double> f{Cloud<double>(1), tape.constant({1, kGroupOrder, C}, x)};
    const auto out = group_conv(f, G(), tape.constant({13, C, C}, w));
    for (std::size_t j = 0; j < kGroupOrder; ++j) {
      bool reaches = false;
      for (std::size_t r : R) reaches |= G().cayley[j][r] == hot;
      EXPECT_EQ(out.at(0, 0, j) != 0.0, reaches) << "j=" << j << " hot=" << hot;
    }
  }
}

TEST(GroupConv, CommutesWithLeftMultiplication) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd;
  const std::size_t n = 2, C = 3;
  std::vector<double> x(n * kGroupOrder * C), w(13 * C * C);
  for (auto& v : x) v = nd(rng);
  for (auto& v : w) v = nd(rng);
  for (std::size_t a = 0; a < kGroupOrder; ++a) {
    const auto sigma = G().permutation_of(a);
    ad::Tape<double> tape;
    auto W = tape.constant({13, C, C}, w);
    FeatureField<double> f{Cloud<double>(n), tape.constant({n, kGroupOrder, C}, x)};
    FeatureField<double> fp{Cloud<double>(n),
                            tape.constant({n, kGroupOrder, C},
                                          permute_rotations<double>(x, n, C, sigma))};
    const auto out = group_conv(f, G(), W);
    const auto outp = group_conv(fp, G(), W);
    const auto expect = permute_rotations(out.features.value(), n, C, sigma);
    for (std::size_t i = 0; i < expect.size(); ++i)
      EXPECT_NEAR(outp.features.value()[i], expect[i], 1e-12);
  }
}

TEST(EncoderConfig, Validation) {
  EXPECT_TRUE(EncoderConfig::desk_default().violations().empty());
  EXPECT_TRUE(EncoderConfig::full_scale().violations().empty());
  EncoderConfig bad{64, {{64, 0, -1, 0}, {8, 4, 0.5, 4}}, 0.2};
  const auto v = bad.violations();
  EXPECT_EQ(v.size(), 5u);
}

TEST(Encoder, DeskOutputShape) {
  std::mt19937_64 rng(7);
  ParameterStore<float> store;
  Encoder<float> enc(EncoderConfig::desk_default(), G(), store, rng);
  const auto X = test::random_cloud<float>(rng, 256, 0.5);
  ad::Tape<float> tape;
  const auto f = enc.encode(tape, store, X);
  EXPECT_EQ(f.features.shape(), (ad::Shape{32, 60, 32}));
  EXPECT_EQ(f.points.size(), 32u);
}

TEST(Encoder, RejectsWrongInputSize) {
  std::mt19937_64 rng(8);
  ParameterStore<double> store;
  Encoder<double> enc(small_config(), G(), store, rng);
  ad::Tape<double> tape;
  EXPECT_THROW(enc.encode(tape, store, test::random_cloud<double>(rng, 10)),
               ContractViolation);
}

TEST(Encoder, PlanIsRotationInvariantForGenericClouds) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const auto X = test::random_cloud<double>(rng, 256, 0.5);
    const auto base = make_plan(X, EncoderConfig::desk_default());
    for (std::size_t a : {7, 23, 59}) {
      const auto p = make_plan(rotate_cloud(X, G()[a]), EncoderConfig::desk_default());
      for (std::size_t l = 0; l < base.levels.size(); ++l) {
        EXPECT_EQ(p.levels[l].sample, base.levels[l].sample);
        EXPECT_EQ(p.levels[l].neighbors, base.levels[l].neighbors);
      }
    }
  }
}

template <class T>
void check_equivariance(double tol, int clouds) {
  std::mt19937_64 rng(10);
  ParameterStore<T> store;
  const auto cfg = small_config();
  Encoder<T> enc(cfg, G(), store, rng);
  for (int trial = 0; trial < clouds; ++trial) {
    const auto X = test::random_cloud<T>(rng, cfg.input_points, 0.5);
    const auto plan = make_plan(X, cfg);
    Cloud<T> pts;
    const auto base = encode_values(enc, store, X, plan, &pts);
    for (std::size_t a = 0; a < kGroupOrder; ++a) {
      Cloud<T> rpts;
      const auto rot = encode_values(enc, store, rotate_cloud(X, G()[a]), plan, &rpts);
      const auto expect = permute_rotations<T>(base, pts.size(),
                                               cfg.output_channels(),
                                               G().permutation_of(a));
      EXPECT_LT(rel_err(widen(rot), widen(expect)), tol) << "g=" << a;
      const auto moved = rotate_cloud(pts, G()[a]);
      for (std::size_t i = 0; i < pts.size(); ++i)
        EXPECT_LT(std::sqrt(double(squared_distance(moved[i], rpts[i]))), 10 * tol);
    }
  }
}

TEST(Encoder, DiscreteEquivarianceDouble) { check_equivariance<double>(1e-8, 2); }
TEST(Encoder, DiscreteEquivarianceFloat) { check_equivariance<float>(1e-4, 2); }

TEST(Encoder, TranslationInvariance) {
  std::mt19937_64 rng(11);
  ParameterStore<double> store;
  const auto cfg = small_config();
  Encoder<double> enc(cfg, G(), store, rng);
  // Dyadic coordinates: every offset is exact, so features match bitwise.
  std::uniform_int_distribution<int> u(-64, 64);
  Cloud<double> X(cfg.input_points);
  for (auto& p : X) p = {u(rng) / 128.0, u(rng) / 128.0, u(rng) / 128.0};
  const auto plan = make_plan(X, cfg);
  const auto base = encode_values(enc, store, X, plan);
  Cloud<double> Xt = X;
  for (auto& p : Xt) p = p + Vec3<double>{1, 2, 3};
  EXPECT_EQ(encode_values(enc, store, Xt, make_plan(Xt, cfg)), base);
  // Generic coordinates: offsets round, features agree to rounding level.
  const auto Y = test::random_cloud<double>(rng, cfg.input_points, 0.5);
  const auto py = make_plan(Y, cfg);
  Cloud<double> Yt = Y;
  for (auto& p : Yt) p = p + Vec3<double>{1, 2, 3};
  EXPECT_LT(rel_err(encode_values(enc, store, Yt, py), encode_values(enc, store, Y, py)),
            1e-9);
}

TEST(Encoder, ApproximateContinuousEquivariance) {
  // Shipped encoder at initialization, on category surface samples.
  std::mt19937_64 rng(12);
  ParameterStore<double> store;
  const auto cfg = EncoderConfig::desk_default();
  Encoder<double> enc(cfg, G(), store, rng);
  const char* cats[] = {"plane", "chair", "bottle", "box"};
  const double degrees[] = {2.5, 5.0, 7.5, 10.0};
  for (int trial = 0; trial < 16; ++trial) {
    const auto X = generate_instance(category(cats[trial % 4]), 100 + trial, cfg.input_points);
    const auto plan = make_plan(X, cfg);
    const auto base = encode_values(enc, store, X, plan);
    const std::size_t a = trial * 11 % kGroupOrder;
    const auto axis = test::random_unit_quaternion(rng);
    const double theta = degrees[trial / 4] * kPi / 180;
    const Quaternion<double> off =
        Quaternion<double>::from_axis_angle(Vec3<double>{axis.x, axis.y, axis.z}, theta);
    const auto rot = encode_values(enc, store, rotate_cloud(X, compose(G()[a], off)), plan);
    const auto expect = permute_rotations<double>(base, cfg.output_points(),
                                                  cfg.output_channels(),
                                                  G().permutation_of(a));
    double num = 0, den = 0;
    for (std::size_t i = 0; i < rot.size(); ++i) {
      num += (rot[i] - expect[i]) * (rot[i] - expect[i]);
      den += expect[i] * expect[i];
    }
    EXPECT_LT(std::sqrt(num / den), 0.3) << cats[trial % 4] << " at " << theta * 180 / kPi
                                         << " deg";
  }
}
