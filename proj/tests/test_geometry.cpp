#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "eqpose/geometry.hpp"
#include "test_util.hpp"

using namespace eqpose;

TEST(Neighborhoods, MatchesBruteForce) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pts = test::random_cloud<double>(rng, 200, 1.0);
    const auto centers = test::random_cloud<double>(rng, 30, 1.0);
    const double r = 0.3 + 0.05 * trial;
    const std::size_t k = 5 + trial;
    const auto nb = neighborhoods(centers, pts, r, k);
    for (std::size_t c = 0; c < centers.size(); ++c) {
      std::vector<std::pair<double, std::size_t>> all;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto d = pts[i] - centers[c];
        const double d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        if (d2 <= r * r) all.emplace_back(d2, i);
      }
      std::stable_sort(all.begin(), all.end(),
                       [](auto& a, auto& b) { return a.first < b.first; });
      if (all.size() > k) all.resize(k);
      ASSERT_EQ(nb.index[c].size(), all.size());
      for (std::size_t m = 0; m < all.size(); ++m) {
        EXPECT_EQ(nb.index[c][m], all[m].second);
        for (int a = 0; a < 3; ++a)
          EXPECT_EQ(nb.offset[c][m][a], pts[all[m].second][a] - centers[c][a]);
      }
    }
  }
}

TEST(Neighborhoods, SelfIsNeighbourAndTiesByIndex) {
  Cloud<double> pts{{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 5, 0}};
  const auto nb = neighborhoods(pts, 1.0, 8);
  EXPECT_EQ(nb.index[0], (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(nb.index[3], (std::vector<std::size_t>{3}));
  const auto one = neighborhoods(Cloud<double>{{0, 0, 0}}, pts, 1.0, 2);
  EXPECT_EQ(one.index[0], (std::vector<std::size_t>{0, 1}));
}

TEST(Neighborhoods, RejectsBadArguments) {
  Cloud<double> pts{{0, 0, 0}};
  EXPECT_THROW(neighborhoods(pts, 0.0, 4), ContractViolation);
  EXPECT_THROW(neighborhoods(pts, 1.0, 0), ContractViolation);
}

TEST(FarthestPointSampling, SmallExample) {
  Cloud<double> pts{{0, 0, 0}, {1, 0, 0}, {3, 0, 0}, {2, 0, 0}};
  EXPECT_EQ(farthest_point_sampling(pts, 3), (std::vector<std::size_t>{0, 2, 1}));
  EXPECT_TRUE(farthest_point_sampling(pts, 0).empty());
  EXPECT_THROW(farthest_point_sampling(pts, 5), ContractViolation);
}

TEST(FarthestPointSampling, GreedyPropertyAndDistinct) {
  std::mt19937_64 rng(4);
  const auto pts = test::random_cloud<double>(rng, 150, 1.0);
  const auto idx = farthest_point_sampling(pts, 40);
  std::vector<std::size_t> sorted = idx;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (std::size_t k = 1; k < idx.size(); ++k) {
    auto dmin = [&](std::size_t i) {
      double best = 1e300;
      for (std::size_t m = 0; m < k; ++m)
        best = std::min(best, squared_distance(pts[i], pts[idx[m]]));
      return best;
    };
    const double chosen = dmin(idx[k]);
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_LE(dmin(i), chosen);
  }
}

TEST(Chamfer, HandExamples) {
  Cloud<double> a{{0, 0, 0}, {1, 0, 0}};
  Cloud<double> b{{0, 0, 0}};
  EXPECT_DOUBLE_EQ(chamfer_unidirectional(a, b), 0.5);
  EXPECT_DOUBLE_EQ(chamfer_unidirectional(b, a), 0.0);
  EXPECT_DOUBLE_EQ(chamfer_bidirectional(a, b), 0.5);
  EXPECT_DOUBLE_EQ(chamfer_bidirectional(a, a), 0.0);
  Cloud<double> c{{0, 2, 0}};
  EXPECT_DOUBLE_EQ(chamfer_bidirectional(b, c), 8.0);
  EXPECT_DOUBLE_EQ(cloud_distance(a, b, DistanceMode::partial), 0.5);
  EXPECT_DOUBLE_EQ(cloud_distance(b, a, DistanceMode::complete), 0.5);
  EXPECT_THROW(chamfer_bidirectional(a, Cloud<double>{}), ContractViolation);
}

TEST(Chamfer, SymmetricNonNegativeAndRigidInvariant) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto x = test::random_cloud<double>(rng, 40, 1.0);
    const auto y = test::random_cloud<double>(rng, 55, 1.0);
    const double d = chamfer_bidirectional(x, y);
    EXPECT_GE(d, 0);
    EXPECT_NEAR(d, chamfer_bidirectional(y, x), 1e-14);
    const RigidPose<double> g{test::random_unit_quaternion(rng),
                              {0.3, -0.2, 0.5}};
    EXPECT_NEAR(chamfer_bidirectional(g.apply(x), g.apply(y)), d, 1e-12);
    // Unidirectional is invariant to adding points only to the target.
    auto y2 = y;
    y2.push_back({10, 10, 10});
    EXPECT_EQ(chamfer_unidirectional(x, y2), chamfer_unidirectional(x, y));
  }
}
