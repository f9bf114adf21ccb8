#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <map>
#include <set>

#include "coop/perception.hpp"
#include "support/oracles.hpp"

namespace coop {
namespace {

PerceptionConfig small_config() {
  PerceptionConfig cfg;
  cfg.channels = 8;
  cfg.heads = 2;
  cfg.sample_points = 2;
  cfg.det_queries = 6;
  return cfg;
}

Detection det_at(double x, double y, std::size_t c = 8) { return {{x, y, 4.5, 2.0, 0.0}, 0.9, Tensor({c}, 0.1), -1}; }

TrackQuery track_at(int id, double x, double y, std::size_t c = 8) {
  TrackQuery t;
  t.id = id;
  t.feature = Tensor({c}, 0.2);
  t.box = {x, y, 4.5, 2.0, 0.0};
  t.age = 1;
  return t;
}

TEST(Associate, EmptyTracksSpawnIdsInDetectionOrder) {
  TrackerState state;
  const auto out = associate(state, {det_at(3, 1), det_at(-4, 2), det_at(0, 9)}, small_config());
  ASSERT_EQ(out.size(), 3u);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(out[static_cast<std::size_t>(k)].id, k);
  EXPECT_DOUBLE_EQ(out[0].box.x, 3.0);
  EXPECT_DOUBLE_EQ(out[1].box.x, -4.0);
  EXPECT_EQ(state.next_id, 3);
}

TEST(Associate, NearbyDetectionKeepsId) {
  TrackerState state{{track_at(7, 0, 0)}, 8};
  const auto out = associate(state, {det_at(0.5, 0)}, small_config());
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].id, 7);
  EXPECT_DOUBLE_EQ(out[0].box.x, 0.5);
  EXPECT_EQ(out[0].age, 2);
  EXPECT_EQ(out[0].coast, 0);
}

TEST(Associate, DetectionsBeyondGateSpawnAndTracksCoast) {
  TrackerState state{{track_at(0, 0, 0), track_at(1, 10, 0)}, 2};
  const auto out = associate(state, {det_at(10, 5), det_at(0, 5)}, small_config());
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[0].id, 0);
  EXPECT_EQ(out[0].coast, 1);
  EXPECT_EQ(out[1].coast, 1);
  EXPECT_EQ(out[2].id, 2);
  EXPECT_DOUBLE_EQ(out[2].box.x, 10.0);
  EXPECT_EQ(out[3].id, 3);
}

TEST(Associate, CoastingTracksRetireAndIdsAreNotReused) {
  TrackerState state{{track_at(0, 0, 0)}, 1};
  const auto cfg = small_config();
  for (int f = 0; f < cfg.max_coast; ++f) EXPECT_EQ(associate(state, {}, cfg).size(), 1u);
  EXPECT_TRUE(associate(state, {}, cfg).empty());
  const auto out = associate(state, {det_at(0, 0)}, cfg);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].id, 1);
}

TEST(Associate, MatchedFeatureIsConvexBlend) {
  TrackerState state{{track_at(0, 0, 0)}, 1};
  Detection d = det_at(0.3, 0.0);
  d.feature = seeded_init({8}, RngSeed{3}, Init::uniform(1.0));
  const Tensor before = state.tracks[0].feature;
  const auto out = associate(state, {d}, small_config());
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_GE(out[0].feature[k], std::min(before[k], d.feature[k]) - 1e-12);
    EXPECT_LE(out[0].feature[k], std::max(before[k], d.feature[k]) + 1e-12);
  }
}

TEST(Associate, AssignmentMatchesExhaustiveOracle) {
  for (std::uint64_t inst = 0; inst < 500; ++inst) {
    const auto [tracks, dets] = testing::random_assignment_instance(RngSeed{inst});
    const std::size_t nt = tracks.size();
    const Assignment a = assign_gated(tracks, dets, 2.0);
    const auto b = testing::exhaustive_assignment(tracks, dets, 2.0);
    ASSERT_EQ(a.matches, b.matches) << "instance " << inst;
    ASSERT_NEAR(a.total_cost, b.cost, 1e-9) << "instance " << inst;
    for (std::size_t t = 0; t < nt; ++t) {
      const int d = a.det_for_track[t];
      if (d < 0) continue;
      EXPECT_EQ(a.track_for_det[static_cast<std::size_t>(d)], static_cast<int>(t));
      EXPECT_LE(norm(tracks[t] - dets[static_cast<std::size_t>(d)]), 2.0);
    }
  }
}

BEVFeature random_bev(std::size_t c, std::uint64_t seed) {
  BEVGrid g{20, 20, 1.0, {3, -2, 0.3}};
  return {g, seeded_init({20, 20, c}, RngSeed{seed}, Init::uniform(1.0)), 0, 0};
}

TEST(Detect, CentersStayInsideGrid) {
  auto cfg = small_config();
  cfg.tau_det = 0.0;
  const BEVFeature bev = random_bev(8, 1);
  auto w = make_perception_weights(cfg, bev.grid, RngSeed{2});
  // Large head outputs push hard against the squashing map.
  w.box_head.w2 *= 50.0;
  const auto dets = detect(bev, w, cfg);
  ASSERT_EQ(dets.size(), cfg.det_queries);
  for (const auto& d : dets) {
    const GridPoint p = world_to_cell(bev.grid, d.box.center());
    EXPECT_TRUE(bev.grid.contains(p)) << p.u << "," << p.v;
    EXPECT_GT(d.box.length, 0.0);
    EXPECT_GT(d.box.width, 0.0);
    EXPECT_GE(d.score, 0.0);
    EXPECT_LE(d.score, 1.0);
  }
}

TEST(Detect, DeterministicAndThresholdAboveOneIsEmpty) {
  auto cfg = small_config();
  const BEVFeature bev = random_bev(8, 3);
  const auto w = make_perception_weights(cfg, bev.grid, RngSeed{4});
  const auto a = decode_queries(bev, w, cfg);
  const auto b = decode_queries(bev, w, cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].box.x, b[k].box.x);
    EXPECT_EQ(a[k].score, b[k].score);
    EXPECT_EQ(a[k].feature, b[k].feature);
  }
  cfg.tau_det = 1.0 + 1e-9;
  EXPECT_TRUE(detect(bev, w, cfg).empty());
}

TEST(StepPerception, NoDetectionsStillYieldsEgo) {
  const auto cfg = small_config();
  const BEVFeature bev = random_bev(8, 5);
  const auto w = make_perception_weights(cfg, bev.grid, RngSeed{6});
  PerceptionState state;
  const auto out = step_perception(bev, state, w, cfg, std::vector<Detection>{});
  EXPECT_TRUE(out.tracks.empty());
  EXPECT_EQ(out.ego.feature.size(), 8u);
  EXPECT_TRUE(out.ego.feature.all_finite());
  EXPECT_EQ(out.ego.pose, bev.grid.origin);
}

TEST(StepPerception, TrackCountNeverExceedsQueryBudget) {
  const auto cfg = small_config();
  const BEVFeature bev = random_bev(8, 7);
  const auto w = make_perception_weights(cfg, bev.grid, RngSeed{8});
  PerceptionState state;
  std::set<int> retired, live;
  for (std::uint64_t f = 0; f < 12; ++f) {
    std::vector<Detection> dets;
    const std::size_t n = 2 + static_cast<std::size_t>(counter_uniform(RngSeed{f}, 0) * 6);
    for (std::size_t k = 0; k < n; ++k)
      dets.push_back(det_at(40 * counter_uniform(RngSeed{f}, 1 + k), 40 * counter_uniform(RngSeed{f}, 20 + k)));
    const auto out = step_perception(bev, state, w, cfg, dets);
    EXPECT_LE(out.tracks.size(), cfg.det_queries);
    std::set<int> now;
    for (const auto& t : out.tracks) {
      EXPECT_FALSE(retired.contains(t.id)) << "id " << t.id << " reused";
      EXPECT_TRUE(now.insert(t.id).second);
    }
    for (int id : live)
      if (!now.contains(id)) retired.insert(id);
    live = now;
  }
}

TEST(StepPerception, OracleFedTracksKeepIdsWithoutSwitches) {
  auto cfg = small_config();
  const BEVFeature bev = random_bev(8, 9);
  const auto w = make_perception_weights(cfg, bev.grid, RngSeed{10});
  PerceptionState state;
  std::map<int, std::set<int>> ids_per_gt;
  // Three agents on crossing constant-velocity paths.
  const std::vector<std::pair<Vec2, Vec2>> agents{{{-10, 0}, {3, 0}}, {{0, -10}, {0, 3}}, {{8, 8}, {-2, -1}}};
  for (int f = 0; f < 12; ++f) {
    std::vector<Box> boxes;
    std::vector<int> gt;
    for (std::size_t a = 0; a < agents.size(); ++a) {
      const Vec2 p = agents[a].first + (cfg.dt * f) * agents[a].second;
      boxes.push_back({p.x, p.y, 4.5, 2.0, std::atan2(agents[a].second.y, agents[a].second.x)});
      gt.push_back(static_cast<int>(a) + 100);
    }
    const auto out = step_perception(bev, state, w, cfg, oracle_detections(bev, boxes, gt));
    ASSERT_EQ(out.tracks.size(), 3u);
    for (const auto& t : out.tracks) ids_per_gt[t.gt_id].insert(t.id);
  }
  ASSERT_EQ(ids_per_gt.size(), 3u);
  for (const auto& [gt, ids] : ids_per_gt) EXPECT_EQ(ids.size(), 1u) << "gt " << gt;
}

TEST(Hungarian, SolvesSmallSquareProblem) {
  const std::vector<std::vector<double>> cost{{4, 1, 3}, {2, 0, 5}, {3, 2, 2}};
  const auto col = hungarian(cost);
  double total = 0.0;
  for (std::size_t r = 0; r < 3; ++r) total += cost[r][col[r]];
  EXPECT_DOUBLE_EQ(total, 5.0);
}

}  // namespace
}  // namespace coop
