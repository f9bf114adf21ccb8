#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "coop/geometry.hpp"

namespace coop {
namespace {

constexpr double kPi = std::numbers::pi;

Pose2D random_pose(RngSeed seed, std::uint64_t k, double span = 30.0) {
  return {span * (2 * counter_uniform(seed, 3 * k) - 1), span * (2 * counter_uniform(seed, 3 * k + 1) - 1),
          kPi * (2 * counter_uniform(seed, 3 * k + 2) - 1)};
}

void expect_pose_near(const Pose2D& a, const Pose2D& b, double tol) {
  EXPECT_NEAR(a.x, b.x, tol);
  EXPECT_NEAR(a.y, b.y, tol);
  EXPECT_NEAR(std::abs(normalize_angle(a.yaw - b.yaw)), 0.0, tol);
}

TEST(Angle, NormalizedIntoHalfOpenInterval) {
  EXPECT_EQ(normalize_angle(kPi), kPi);
  EXPECT_NEAR(normalize_angle(-kPi), kPi, 1e-15);
  EXPECT_NEAR(normalize_angle(3 * kPi), kPi, 1e-12);
  EXPECT_NEAR(normalize_angle(2 * kPi + 0.5), 0.5, 1e-12);
  for (std::uint64_t i = 0; i < 200; ++i) {
    const double a = normalize_angle(100.0 * (2 * counter_uniform(RngSeed{1}, i) - 1));
    EXPECT_GT(a, -kPi);
    EXPECT_LE(a, kPi);
  }
}

TEST(Pose, IdentityAndTranslation) {
  const Pose2D p{1.5, -2.0, 0.3};
  EXPECT_EQ(compose(Pose2D{}, p), p);
  expect_pose_near(compose(Pose2D{1, 0, 0}, Pose2D{1, 0, 0}), Pose2D{2, 0, 0}, 1e-15);
  expect_pose_near(compose(p, inverse(p)), Pose2D{}, 1e-12);
}

TEST(Pose, GroupLawsOnRandomTriples) {
  const RngSeed seed{11};
  for (std::uint64_t k = 0; k < 200; ++k) {
    const Pose2D a = random_pose(seed, 3 * k), b = random_pose(seed, 3 * k + 1), c = random_pose(seed, 3 * k + 2);
    expect_pose_near(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-12);
    expect_pose_near(compose(inverse(a), a), Pose2D{}, 1e-12);
    expect_pose_near(compose(a, Pose2D{}), a, 1e-12);
  }
}

TEST(RelativeTransform, Examples) {
  expect_pose_near(relative_transform({3, 4, 1}, {3, 4, 1}), Pose2D{}, 1e-15);
  expect_pose_near(relative_transform({0, 0, 0}, {1, 0, 0}), Pose2D{-1, 0, 0}, 1e-15);
}

TEST(RelativeTransform, ConsistentWithWorldCoordinates) {
  const RngSeed seed{5};
  for (std::uint64_t k = 0; k < 50; ++k) {
    const Pose2D from = random_pose(seed, 2 * k), to = random_pose(seed, 2 * k + 1);
    const Pose2D t = relative_transform(from, to);
    const Vec2 p{counter_uniform(seed, 1000 + k) * 10, counter_uniform(seed, 2000 + k) * 10};
    // Same world point through either route.
    const Vec2 world = transform_point(from, p);
    const Vec2 in_to = transform_point(t, p);
    const Vec2 world2 = transform_point(to, in_to);
    EXPECT_NEAR(world.x, world2.x, 1e-9);
    EXPECT_NEAR(world.y, world2.y, 1e-9);
    const Vec2 back = transform_point(inverse(t), in_to);
    EXPECT_NEAR(back.x, p.x, 1e-9);
    EXPECT_NEAR(back.y, p.y, 1e-9);
  }
}

TEST(Grid, WorldToCellConventions) {
  BEVGrid g{50, 40, 0.5, {10, -3, 0.7}};
  const GridPoint c = world_to_cell(g, {10, -3});
  EXPECT_NEAR(c.u, 24.5, 1e-12);
  EXPECT_NEAR(c.v, 19.5, 1e-12);
  g.origin = {};
  const GridPoint dx = world_to_cell(g, {0.5, 0.0});
  EXPECT_NEAR(dx.u, 24.5, 1e-12);
  EXPECT_NEAR(dx.v, 20.5, 1e-12);
}

TEST(Grid, RoundTrip) {
  const BEVGrid g{50, 50, 1.0, {4, 7, -2.0}};
  for (std::uint64_t k = 0; k < 100; ++k) {
    const GridPoint p{50 * counter_uniform(RngSeed{2}, 2 * k), 50 * counter_uniform(RngSeed{2}, 2 * k + 1)};
    const GridPoint q = world_to_cell(g, cell_to_world(g, p));
    EXPECT_NEAR(p.u, q.u, 1e-9);
    EXPECT_NEAR(p.v, q.v, 1e-9);
  }
}

BEVFeature random_feature(std::size_t h, std::size_t w, std::size_t c, RngSeed seed, Pose2D origin = {}) {
  return {BEVGrid{h, w, 1.0, origin}, seeded_init({h, w, c}, seed, Init::uniform(1.0)), 0, 0};
}

TEST(Warp, IdentityIsExact) {
  const BEVFeature f = random_feature(12, 10, 3, RngSeed{1}, {5, 5, 0.4});
  const auto r = warp_bev_masked(f, Pose2D{});
  EXPECT_EQ(r.feature.data, f.data);
  EXPECT_EQ(sum(r.mask), 120.0);
}

TEST(Warp, OneCellTranslationShiftsColumns) {
  const BEVFeature f = random_feature(8, 9, 2, RngSeed{2});
  const BEVFeature w = warp_bev(f, Pose2D{1.0, 0.0, 0.0});
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_EQ(w.data(i, 0, c), 0.0);
      for (std::size_t j = 1; j < 9; ++j) EXPECT_EQ(w.data(i, j, c), f.data(i, j - 1, c));
    }
  }
}

TEST(Warp, HalfTurnReversesIndices) {
  const BEVFeature f = random_feature(7, 11, 2, RngSeed{3});
  const BEVFeature w = warp_bev(f, Pose2D{0.0, 0.0, kPi});
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 11; ++j)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(w.data(i, j, c), f.data(6 - i, 10 - j, c), 1e-9);
}

TEST(Warp, SubCellRoundTripRecoversInterior) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const BEVFeature f = random_feature(16, 16, 2, RngSeed{s});
    const Pose2D t{0.8 * (counter_uniform(RngSeed{s}, 1) - 0.5), 0.8 * (counter_uniform(RngSeed{s}, 2) - 0.5), 0.0};
    const BEVFeature back = warp_bev(warp_bev(f, t), inverse(t), f.grid);
    // Bilinear resampling twice smooths; a linear field is reproduced exactly.
    BEVFeature lin = f;
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 16; ++j)
        for (std::size_t c = 0; c < 2; ++c) lin.data(i, j, c) = 0.3 * double(i) - 0.2 * double(j) + 10.0 + double(c);
    const BEVFeature lin_back = warp_bev(warp_bev(lin, t), inverse(t), lin.grid);
    for (std::size_t i = 2; i < 14; ++i)
      for (std::size_t j = 2; j < 14; ++j)
        for (std::size_t c = 0; c < 2; ++c) {
          const double ref = lin.data(i, j, c);
          EXPECT_LE(std::abs(lin_back.data(i, j, c) - ref) / std::abs(ref), 1e-6);
        }
    EXPECT_TRUE(back.data.all_finite());
  }
}

TEST(Warp, IntegerShiftConservesInBoundsMass) {
  const BEVFeature f = random_feature(10, 10, 1, RngSeed{8});
  const BEVFeature w = warp_bev(f, Pose2D{2.0, -3.0, 0.0});
  // Target (i, j) reads source (i + 3, j - 2).
  double expect = 0.0, got = 0.0, total = 0.0;
  for (std::size_t i = 3; i < 10; ++i)
    for (std::size_t j = 0; j + 2 < 10; ++j) expect += f.data(i, j, 0);
  for (std::size_t i = 0; i + 3 < 10; ++i)
    for (std::size_t j = 2; j < 10; ++j) {
      EXPECT_EQ(w.data(i, j, 0), f.data(i + 3, j - 2, 0));
      got += w.data(i, j, 0);
    }
  for (double v : w.data.values()) total += v;
  EXPECT_EQ(got, expect);
  EXPECT_EQ(total, got);
}

TEST(Warp, GeometryMismatchThrows) {
  const BEVFeature f = random_feature(8, 8, 1, RngSeed{1});
  BEVGrid other = f.grid;
  other.resolution = 0.5;
  EXPECT_THROW(warp_bev(f, Pose2D{}, other), GeometryError);
}

TEST(Camera, AxisPointProjectsToImageCenter) {
  const CameraRig rig = make_ring_rig(6, 1.6, kPi / 2, 96, 64);
  const auto p = project_point(rig.views[0], Pose2D{}, {10.0, 0.0}, 1.6);
  EXPECT_TRUE(p.visible);
  EXPECT_DOUBLE_EQ(p.u, 48.0);
  EXPECT_DOUBLE_EQ(p.v, 32.0);
  EXPECT_FALSE(project_point(rig.views[0], Pose2D{}, {-5.0, 0.0}, 1.0).visible);
}

TEST(Camera, FortyFiveDegreesHitsBorderWithNinetyDegreeFov) {
  const CameraRig rig = make_ring_rig(6, 1.6, kPi / 2, 96, 64);
  const auto left = project_point(rig.views[0], Pose2D{}, {10.0, 10.0}, 1.6);
  const auto right = project_point(rig.views[0], Pose2D{}, {10.0, -10.0}, 1.6);
  EXPECT_NEAR(left.u, 0.0, 1.0);
  EXPECT_NEAR(right.u, 96.0, 1.0);
}

TEST(Camera, FovMustBeOpenInterval) {
  EXPECT_THROW(CameraView::make({}, 1.0, kPi, 10, 10), GeometryError);
  EXPECT_THROW(CameraView::make({}, 1.0, 0.0, 10, 10), GeometryError);
}

TEST(Camera, PillarColumnInvariance) {
  const CameraRig rig = make_ring_rig(6, 1.6, 1.2, 96, 64);
  const BEVGrid g{50, 50, 1.0, {3, 2, 0.3}};
  const std::vector<double> heights{-1, 0, 1, 2};
  for (std::size_t i = 0; i < 50; i += 7) {
    for (std::size_t j = 0; j < 50; j += 5) {
      for (std::size_t v = 0; v < 6; ++v) {
        const auto pr = project_pillar(g, i, j, heights, rig, v);
        ASSERT_EQ(pr.size(), 4u);
        const Vec2 w = cell_to_world(g, {double(i), double(j)});
        const Vec2 local = transform_point(inverse(compose(g.origin, rig.views[v].mount)), w);
        if (local.x <= 1e-6) continue;
        for (const auto& p : pr) EXPECT_NEAR(p.u, pr[0].u, 1e-9);
      }
    }
  }
  EXPECT_THROW(project_pillar(g, 50, 0, heights, rig, 0), GeometryError);
  EXPECT_THROW(project_pillar(g, 0, 0, heights, rig, 6), GeometryError);
}

TEST(Camera, RingRigCoversEveryDirection) {
  const CameraRig rig = make_ring_rig(6, 1.6, 70.0 * kPi / 180.0, 96, 64);
  rig.validate(6);
  EXPECT_THROW(rig.validate(4), GeometryError);
  for (int deg = -179; deg <= 180; deg += 3) {
    const double a = deg * kPi / 180.0;
    const Vec2 p{20 * std::cos(a), 20 * std::sin(a)};
    bool seen = false;
    for (const auto& v : rig.views) seen = seen || project_point(v, Pose2D{}, p, 1.6).visible;
    EXPECT_TRUE(seen) << deg;
  }
}

}  // namespace
}  // namespace coop
