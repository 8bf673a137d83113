#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "eqpose/loss.hpp"
#include "eqpose/model.hpp"
#include "test_util.hpp"

using namespace eqpose;

namespace {

const RotationGroup& G() { return icosahedral_group(); }

ModelConfig small_model() {
  ModelConfig c;
  c.encoder = {64, {{32, 8, 0.35, 16}, {16, 8, 0.7, 16}}, 0.2};
  c.heads.hidden = 16;
  c.heads.shape_hidden = 16;
  c.heads.n_z = 32;
  return c;
}

template <class T>
FeatureField<T> random_field(ad::Tape<T>& tape, std::mt19937_64& rng, std::size_t n,
                             std::size_t C) {
  std::normal_distribution<double> nd;
  std::vector<T> v(n * kGroupOrder * C);
  for (auto& x : v) x = T(nd(rng));
  return {Cloud<T>(n), tape.constant({n, kGroupOrder, C}, v)};
}

}  // namespace

TEST(ResidualActivation, Limits) {
  ad::Tape<double> tape;
  std::vector<double> raw(7 * 3, 0.0);
  raw[0] = -1e6;
  raw[7] = 1e6;
  raw[14] = 0;
  raw[1] = 2.0;
  raw[4] = -3.0;
  const auto a = ops::residual_activation(tape.constant({3, 7}, raw), 0.1).value();
  EXPECT_NEAR(a[0], 0.9510565162951535, 1e-15);
  EXPECT_NEAR(residual_w_floor(), 0.9510565162951535, 1e-15);
  EXPECT_EQ(a[7], 1.0);
  EXPECT_EQ(residual_angle(a[7]), 0.0);
  EXPECT_NEAR(a[14], 0.5 * (1 + residual_w_floor()), 1e-15);
  EXPECT_NEAR(a[1], 0.2, 1e-15);
  EXPECT_EQ(a[4], -3.0);
}

TEST(ResidualActivation, AngleBoundOnRandomInputs) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0, 30);
  ad::Tape<double> tape;
  std::vector<double> raw(7 * 2000);
  for (auto& v : raw) v = nd(rng);
  const auto a = ops::residual_activation(tape.constant({2000, 7}, raw), 0.1).value();
  for (std::size_t r = 0; r < 2000; ++r) {
    EXPECT_GE(a[7 * r], residual_w_floor() - 1e-6);
    EXPECT_LT(residual_angle(a[7 * r]), kPi / 5 + 1e-6);
  }
}

TEST(CenteredSigmoid, StrictlyInsideOpenInterval) {
  for (auto v : {-1e30, -800.0, -40.0, 0.0, 40.0, 800.0, 1e30}) {
    ad::Tape<float> tf;
    const float yf = ops::centered_sigmoid(tf.constant({1}, {float(v)})).item();
    EXPECT_GT(yf, -0.5f);
    EXPECT_LT(yf, 0.5f);
    ad::Tape<double> td;
    const double yd = ops::centered_sigmoid(td.constant({1}, {v})).item();
    EXPECT_GT(yd, -0.5);
    EXPECT_LT(yd, 0.5);
  }
}

TEST(ComposeWithGroup, MatchesQuaternionAlgebra) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  std::vector<double> act(60 * 7);
  for (auto& v : act) v = nd(rng);
  const Vec3<double> t0{0.1, -0.2, 0.3};
  ad::Tape<double> tape;
  const auto c = ops::compose_with_group(tape.constant({60, 7}, act), G(), t0).value();
  for (std::size_t j = 0; j < 60; ++j) {
    const Quaternion<double> dq{act[7 * j], act[7 * j + 1], act[7 * j + 2], act[7 * j + 3]};
    const auto q = G()[j] * dq;  // raw product, no sign canonicalization
    const auto t = G()[j].rotate(Vec3<double>{act[7 * j + 4], act[7 * j + 5],
                                              act[7 * j + 6]}) + t0;
    EXPECT_NEAR(c[7 * j], q.w, 1e-14);
    EXPECT_NEAR(c[7 * j + 1], q.x, 1e-14);
    EXPECT_NEAR(c[7 * j + 2], q.y, 1e-14);
    EXPECT_NEAR(c[7 * j + 3], q.z, 1e-14);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(c[7 * j + 4 + k], t[k], 1e-14);
  }
}

TEST(ShapeHead, BitwiseInvariantToRotationPermutation) {
  std::mt19937_64 rng(3);
  ParameterStore<float> store;
  const HeadConfig hc{16, 16, 32, 0.1, 0.2};
  ShapeHead<float> head(8, hc, store, rng);
  for (std::size_t a = 0; a < 60; a += 3) {
    ad::Tape<float> tape;
    const auto f = random_field<float>(tape, rng, 10, 8);
    const auto perm = permute_rotations(f.features.value(), 10, 8, G().permutation_of(a));
    FeatureField<float> fp{f.points, tape.constant({10, 60, 8}, perm)};
    const auto z = head(tape, store, f).value();
    const auto zp = head(tape, store, fp).value();
    ASSERT_EQ(z.size(), 96u);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], zp[i]);
  }
}

TEST(ShapeHead, OutputsStayInsideHalfCube) {
  std::mt19937_64 rng(4);
  ParameterStore<double> store;
  const HeadConfig hc{16, 16, 32, 0.1, 0.2};
  ShapeHead<double> head(8, hc, store, rng);
  for (std::size_t k = 0; k < store.size(); ++k)
    for (auto& v : store[k].data) v *= 1e4;
  ad::Tape<double> tape;
  const auto z = head(tape, store, random_field<double>(tape, rng, 5, 8)).value();
  for (double v : z) {
    EXPECT_GT(v, -0.5);
    EXPECT_LT(v, 0.5);
  }
}

TEST(Model, ReconstructionAndPoseEquivariance) {
  std::mt19937_64 rng(5);
  const auto cfg = small_model();
  Model<double> model(cfg, 11);
  std::uniform_real_distribution<double> ut(-1, 1);
  for (int trial = 0; trial < 2; ++trial) {
    const auto X = test::random_cloud<double>(rng, 64, 0.5);
    const auto plan = make_plan(X, cfg.encoder);
    ad::Tape<double> tape;
    const auto base = model.forward(tape, X, plan);
    const Cloud<double> Z = to_cloud(base.shape.value());
    for (std::size_t a = 0; a < 60; a += 13) {
      const RigidPose<double> A{G()[a], {ut(rng), ut(rng), ut(rng)}};
      ad::Tape<double> t2;
      const auto moved = model.forward(t2, A.apply(X), plan);
      EXPECT_LT(chamfer_bidirectional(Z, to_cloud(moved.shape.value())), 1e-12);
      const auto sigma = G().permutation_of(a);
      for (std::size_t j = 0; j < 60; ++j) {
        const auto p = base.hypotheses.pose(j);
        const auto pm = moved.hypotheses.pose(sigma[j]);
        EXPECT_LT(std::abs(std::abs(dot(pm.rotation, compose(A.rotation, p.rotation))) - 1), 1e-14);
        EXPECT_LT(norm(pm.translation - A.apply(p.translation)), 1e-9);
        EXPECT_LT(std::abs(moved.hypotheses.residual_rotation(sigma[j]).w -
                           base.hypotheses.residual_rotation(j).w),
                  1e-9);
      }
    }
  }
}

TEST(PoseApply, Examples) {
  std::mt19937_64 rng(6);
  const auto Zc = test::random_cloud<double>(rng, 20, 0.5);
  const auto q = test::random_unit_quaternion(rng);
  const Vec3<double> t{0.3, 0.1, -0.4};
  ad::Tape<double> tape;
  PoseHypothesisSet<double> hs;
  std::vector<double> rows(60 * 7, 0.0);
  for (std::size_t j = 0; j < 60; ++j) rows[7 * j] = 1.0;
  rows[7 * 2 + 4] = 1;
  rows[7 * 2 + 5] = 2;
  rows[7 * 2 + 6] = 3;
  // Unnormalized quaternion: application uses the normalized copy.
  const double s = 2.5;
  rows[7 * 5] = s * q.w, rows[7 * 5 + 1] = s * q.x, rows[7 * 5 + 2] = s * q.y,
  rows[7 * 5 + 3] = s * q.z;
  rows[7 * 5 + 4] = t[0], rows[7 * 5 + 5] = t[1], rows[7 * 5 + 6] = t[2];
  hs.composed = tape.constant({60, 7}, rows);
  const auto Z = cloud_var(tape, Zc);
  const auto id = to_cloud(pose_apply(Z, hs, 0).value());
  const auto tr = to_cloud(pose_apply(Z, hs, 2).value());
  const auto gen = to_cloud(pose_apply(Z, hs, 5).value());
  const RigidPose<double> P{q, t};
  const auto back = P.inverse().apply(gen);
  const auto vals = pose_apply_values(Zc, std::span<const double>(rows).subspan(35, 7));
  for (std::size_t i = 0; i < Zc.size(); ++i) {
    EXPECT_EQ(id[i], Zc[i]);
    for (int k = 0; k < 3; ++k) EXPECT_EQ(tr[i][k], Zc[i][k] + double(k + 1));
    EXPECT_LT(test::max_abs_diff(back[i], Zc[i]), 1e-7);
    EXPECT_EQ(vals[i], gen[i]);
  }
}

TEST(Model, InstanceModeUsesTemplateAndLeavesShapeHeadUntouched) {
  std::mt19937_64 rng(7);
  const auto cfg = small_model();
  Model<double> model(cfg, 3);
  const auto tmpl = test::random_cloud<double>(rng, 40, 0.5);
  model.set_template(tmpl);
  EXPECT_TRUE(model.instance_mode());
  const auto X = test::random_cloud<double>(rng, 64, 0.5);
  for (int call = 0; call < 2; ++call) {
    ad::Tape<double> tape;
    auto out = model.forward(tape, X);
    EXPECT_EQ(to_cloud(out.shape.value()), tmpl);
    auto L = min_of_n_loss(tape, X, out.shape, out.hypotheses, DistanceMode::complete,
                           0.1);
    model.parameters().zero_grads();
    tape.backward(L.total);
    tape.accumulate_param_grads(1.0);
    for (std::size_t k = 0; k < model.parameters().size(); ++k) {
      const auto& p = model.parameters()[k];
      if (p.name.rfind("shape.", 0) != 0) continue;
      for (double g : p.grad) EXPECT_EQ(g, 0.0) << p.name;
    }
  }
  EXPECT_THROW(model.set_template({}), ContractViolation);
  model.clear_template();
  EXPECT_FALSE(model.instance_mode());
}

TEST(Model, PerfectPoseOnTemplateGivesZeroReconstructionLoss) {
  const auto cfg = small_model();
  Model<double> model(cfg, 3);
  std::mt19937_64 rng(8);
  const auto tmpl = test::random_cloud<double>(rng, 64, 0.5);
  model.set_template(tmpl);
  ad::Tape<double> tape;
  const auto out = model.forward(tape, tmpl);
  // Hypothesis 0 with an identity residual reproduces the template exactly.
  std::vector<double> rows(60 * 7, 0.0);
  for (std::size_t j = 0; j < 60; ++j) {
    rows[7 * j] = 1.0;
    rows[7 * j + 4] = 5.0;
  }
  rows[4] = 0;
  PoseHypothesisSet<double> hs{tape.constant({60, 7}, rows), tape.constant({60, 7}, rows),
                               {0, 0, 0}};
  const auto L = min_of_n_loss(tape, tmpl, out.shape, hs, DistanceMode::complete, 0.1);
  EXPECT_EQ(L.values.selected_j, 0u);
  EXPECT_EQ(L.values.rec, 0.0);
  EXPECT_EQ(L.values.reg, 0.0);
}
