#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "coop/fusion.hpp"
#include "support/grad_check.hpp"
#include "support/gradient_cases.hpp"

namespace coop {
namespace {

using testing::max_relative_error;
using testing::numeric_gradient;
using testing::weighted_sum;

BEVFeature make_feature(std::size_t h, std::size_t w, std::size_t c, Pose2D origin, std::uint64_t seed) {
  BEVGrid g{h, w, 1.0, origin};
  return {g, seeded_init({h, w, c}, RngSeed{seed}, Init::uniform(1.0)), 0, 0};
}

GatedBlockParams degenerate_block(std::size_t c, double gate) {
  return {DeformableAttnParams::passthrough(c), Tensor({c}, gate)};
}

TEST(TemporalFuse, FirstFrameIsIdentity) {
  const BEVFeature cur = make_feature(6, 7, 4, {1, 2, 0.3}, 1);
  const auto params = FusionParams::seeded(4, 2, 3, RngSeed{2});
  TemporalState state;
  EXPECT_EQ(temporal_fuse(cur, state, params.temporal).data, cur.data);
  GatedBlockParams open = params.temporal;
  open.gate = Tensor({4}, 1.0);
  EXPECT_EQ(temporal_fuse(cur, state, open).data, cur.data);
}

TEST(TemporalFuse, StationaryDegenerateDoublesUnderPlainResidual) {
  const BEVFeature cur = make_feature(6, 7, 4, {3, -1, 0.7}, 3);
  TemporalState state;
  state.advance(cur);
  const BEVFeature plain = temporal_fuse(cur, state, degenerate_block(4, 1.0));
  for (std::size_t i = 0; i < cur.data.size(); ++i) EXPECT_NEAR(plain.data[i], 2.0 * cur.data[i], 1e-12);
  const BEVFeature gated = temporal_fuse(cur, state, degenerate_block(4, 0.0));
  EXPECT_EQ(gated.data, cur.data);
}

TEST(TemporalFuse, OneCellEgoShiftMovesUpdateToCompensatedCell) {
  const std::size_t h = 9, w = 11, c = 3;
  BEVFeature prev{{h, w, 1.0, {0, 0, 0}}, Tensor({h, w, c}), 0, 0};
  const std::size_t i0 = 4, j0 = 6;
  for (std::size_t ch = 0; ch < c; ++ch) prev.data(i0, j0, ch) = 1.0 + double(ch);
  TemporalState state;
  state.advance(prev);
  // Ego moved one cell forward: the static cell now sits one column lower.
  BEVFeature cur{{h, w, 1.0, {1.0, 0, 0}}, Tensor({h, w, c}), 0, 1};
  const BEVFeature out = temporal_fuse(cur, state, degenerate_block(c, 1.0));
  std::size_t best = 0;
  double best_mag = -1.0;
  for (std::size_t k = 0; k < h * w; ++k) {
    double m = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) m += std::abs(out.data[k * c + ch]);
    if (m > best_mag) best_mag = m, best = k;
  }
  EXPECT_EQ(best, i0 * w + (j0 - 1));
  EXPECT_GT(best_mag, 0.0);
}

TEST(TemporalFuse, GridMismatchThrows) {
  TemporalState state;
  state.advance(make_feature(6, 7, 4, {}, 1));
  EXPECT_THROW(temporal_fuse(make_feature(7, 7, 4, {}, 2), state, degenerate_block(4, 1.0)), GeometryError);
}

TEST(TemporalFuse, OutputDependsOnlyOnPastFrames) {
  const auto params = FusionParams::seeded(4, 2, 2, RngSeed{9});
  GatedBlockParams open = params.temporal;
  open.gate = Tensor({4}, 0.7);
  std::vector<BEVFeature> frames;
  for (int t = 0; t < 5; ++t) frames.push_back(make_feature(6, 6, 4, {0.4 * t, 0.1 * t, 0.05 * t}, 50 + t));
  auto run = [&](const std::vector<BEVFeature>& seq) {
    TemporalState state;
    std::vector<Tensor> outs;
    for (const auto& f : seq) {
      const BEVFeature fused = temporal_fuse(f, state, open);
      outs.push_back(fused.data);
      state.advance(fused);
    }
    return outs;
  };
  const auto base = run(frames);
  auto mutated = frames;
  mutated[3].data = seeded_init(mutated[3].data.shape(), RngSeed{999}, Init::uniform(3.0));
  mutated[4].grid.origin = {7, 7, 1};
  const auto after = run(mutated);
  for (int t = 0; t < 3; ++t) EXPECT_EQ(base[t], after[t]) << t;
  EXPECT_NE(base[3], after[3]);
}

TEST(AlignInfrastructure, SamePoseIsIdentity) {
  const BEVFeature inf = make_feature(8, 9, 3, {}, 4);
  const Pose2D pose{5, -2, 0.4};
  const WarpResult r = align_infrastructure(inf, pose, pose);
  EXPECT_EQ(r.feature.data, inf.data);
  for (double m : r.mask.values()) EXPECT_EQ(m, 1.0);
}

TEST(AlignInfrastructure, DisjointCoverageIsEmpty) {
  const BEVFeature inf = make_feature(10, 10, 3, {}, 5);
  const WarpResult r = align_infrastructure(inf, {100, 0, 0}, {0, 0, 0});
  for (double v : r.feature.data.values()) EXPECT_EQ(v, 0.0);
  for (double m : r.mask.values()) EXPECT_EQ(m, 0.0);
}

// Convex polygon clipping for the overlap-area oracle.
using Poly = std::vector<Vec2>;

Poly clip(const Poly& subject, const Poly& clipper) {
  Poly out = subject;
  for (std::size_t e = 0; e < clipper.size() && !out.empty(); ++e) {
    const Vec2 a = clipper[e], b = clipper[(e + 1) % clipper.size()];
    auto side = [&](Vec2 p) { return cross(b - a, p - a); };
    Poly in = out;
    out.clear();
    for (std::size_t k = 0; k < in.size(); ++k) {
      const Vec2 p = in[k], q = in[(k + 1) % in.size()];
      const double sp = side(p), sq = side(q);
      if (sp >= 0) out.push_back(p);
      if ((sp >= 0) != (sq >= 0)) out.push_back(p + (sp / (sp - sq)) * (q - p));
    }
  }
  return out;
}

double area(const Poly& p) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += cross(p[k], p[(k + 1) % p.size()]);
  return 0.5 * std::abs(s);
}

double perimeter(const Poly& p) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += norm(p[(k + 1) % p.size()] - p[k]);
  return s;
}

Poly world_rect(const Pose2D& pose, double x0, double x1, double y0, double y1) {
  return {transform_point(pose, {x0, y0}), transform_point(pose, {x1, y0}), transform_point(pose, {x1, y1}),
          transform_point(pose, {x0, y1})};
}

class OverlapCase : public ::testing::TestWithParam<Pose2D> {};

TEST_P(OverlapCase, MaskFractionMatchesAreaOracle) {
  const std::size_t n = 50;
  const BEVFeature inf = make_feature(n, n, 2, {}, 6);
  const Pose2D ego{0, 0, 0};
  const Pose2D inf_pose = GetParam();
  const WarpResult r = align_infrastructure(inf, inf_pose, ego);
  double covered = 0.0;
  for (double m : r.mask.values()) covered += m;
  const double fraction = covered / double(n * n);

  // Source validity region spans the cell centers; the target covers whole cells.
  const double half_c = 0.5 * double(n - 1), half_t = 0.5 * double(n);
  const Poly src = world_rect(inf_pose, -half_c, half_c, -half_c, half_c);
  const Poly tgt = world_rect(ego, -half_t, half_t, -half_t, half_t);
  const Poly inter = clip(src, tgt);
  const double oracle = area(inter) / (double(n) * double(n));
  const double band = perimeter(inter) / (double(n) * double(n));
  EXPECT_NEAR(fraction, oracle, band) << "oracle " << oracle;
  EXPECT_GT(fraction, 0.0);
}

INSTANTIATE_TEST_SUITE_P(Poses, OverlapCase,
                         ::testing::Values(Pose2D{30, 0, 0}, Pose2D{30, 10, 0}, Pose2D{30, 0, std::numbers::pi / 6},
                                           Pose2D{-20, 15, 1.1}));

TEST(AlignInfrastructure, ThirtyMetersAheadCoversFortyPercent) {
  const BEVFeature inf = make_feature(50, 50, 2, {}, 7);
  const WarpResult r = align_infrastructure(inf, {30, 0, 0}, {0, 0, 0});
  double covered = 0.0;
  for (double m : r.mask.values()) covered += m;
  EXPECT_NEAR(covered / 2500.0, 0.4, 50.0 / 2500.0);
}

TEST(AlignInfrastructure, InvariantUnderSharedRigidMotion) {
  const BEVFeature inf = make_feature(20, 20, 3, {}, 8);
  const Pose2D inf_pose{6.3, -2.2, 0.35}, ego_pose{-1.5, 0.8, -0.2};
  const WarpResult a = align_infrastructure(inf, inf_pose, ego_pose);
  for (const Pose2D m : {Pose2D{100, -40, 0}, Pose2D{3, 4, 2.0}, Pose2D{-12.5, 7.25, -2.9}}) {
    const WarpResult b = align_infrastructure(inf, compose(m, inf_pose), compose(m, ego_pose));
    for (std::size_t k = 0; k < a.feature.data.size(); ++k) EXPECT_NEAR(a.feature.data[k], b.feature.data[k], 1e-9);
    for (std::size_t k = 0; k < a.mask.size(); ++k) EXPECT_EQ(a.mask[k], b.mask[k]);
  }
}

TEST(V2xFuse, ZeroMaskIsBitwiseEgo) {
  const BEVFeature ego = make_feature(7, 8, 4, {}, 10);
  const BEVFeature inf = make_feature(7, 8, 4, {}, 11);
  auto p = FusionParams::seeded(4, 2, 3, RngSeed{12}).v2x;
  p.gate = Tensor({4}, 1.0);
  const BEVFeature out = v2x_fuse(ego, inf, Tensor({7, 8}), p);
  EXPECT_EQ(out.data, ego.data);
}

TEST(V2xFuse, MaskedCellsStayBitIdentical) {
  const BEVFeature ego = make_feature(7, 8, 4, {}, 13);
  const BEVFeature inf = make_feature(7, 8, 4, {}, 14);
  auto p = FusionParams::seeded(4, 2, 3, RngSeed{15}).v2x;
  p.gate = seeded_init({4}, RngSeed{16}, Init::uniform(1.0));
  Tensor mask({7, 8});
  for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = counter_uniform(RngSeed{17}, k) > 0.5 ? 1.0 : 0.0;
  const BEVFeature out = v2x_fuse(ego, inf, mask, p);
  for (std::size_t k = 0; k < mask.size(); ++k) {
    for (std::size_t ch = 0; ch < 4; ++ch) {
      if (mask[k] == 0.0) {
        EXPECT_EQ(out.data[k * 4 + ch], ego.data[k * 4 + ch]);
      }
    }
  }
  EXPECT_NE(out.data, ego.data);
}

TEST(V2xFuse, ZeroGateIsEgo) {
  const BEVFeature ego = make_feature(7, 8, 4, {}, 18);
  const BEVFeature inf = make_feature(7, 8, 4, {}, 19);
  const auto p = FusionParams::seeded(4, 2, 3, RngSeed{20}).v2x;
  EXPECT_EQ(v2x_fuse(ego, inf, Tensor({7, 8}, 1.0), p).data, ego.data);
}

TEST(V2xFuse, SingleCellSupportMatchesBilinearFootprint) {
  const std::size_t h = 9, w = 10, c = 2;
  const BEVFeature ego{{h, w, 1.0, {}}, Tensor({h, w, c}), 0, 0};
  BEVFeature inf = ego;
  const std::size_t a = 4, b = 5;
  inf.data(a, b, 0) = 1.0;
  inf.data(a, b, 1) = -2.0;
  for (const auto& [du, dv] : std::vector<std::pair<double, double>>{{0.0, 0.0}, {0.5, -0.3}, {-1.25, 0.75}}) {
    auto p = degenerate_block(c, 1.0);
    p.attention.offset_b[0] = du;
    p.attention.offset_b[1] = dv;
    const BEVFeature out = v2x_fuse(ego, inf, Tensor({h, w}, 1.0), p);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double su = double(i) + du, sv = double(j) + dv;
        const bool touches = std::abs(su - double(a)) < 1.0 && std::abs(sv - double(b)) < 1.0;
        const bool nonzero = out.data(i, j, 0) != 0.0 || out.data(i, j, 1) != 0.0;
        EXPECT_EQ(nonzero, touches) << i << "," << j << " offset " << du << "," << dv;
      }
  }
}

TEST(V2xFuse, ShapeErrors) {
  const BEVFeature ego = make_feature(7, 8, 4, {}, 1);
  const auto p = degenerate_block(4, 1.0);
  EXPECT_THROW(v2x_fuse(ego, make_feature(7, 8, 3, {}, 2), Tensor({7, 8}), p), DimensionError);
  EXPECT_THROW(v2x_fuse(ego, make_feature(7, 8, 4, {}, 2), Tensor({7, 7}), p), DimensionError);
}

// Gradient checks for both gated fusion blocks.
void check_block(testing::BlockCase& b) {
  const auto g = gated_attention_block_backward(b.query, b.value, b.refs, b.mask, b.params, b.upstream);
  auto loss = [&] { return weighted_sum(gated_attention_block(b.query, b.value, b.refs, b.mask, b.params), b.upstream); };
  EXPECT_LE(max_relative_error(g.query, numeric_gradient(loss, b.query)), 1e-4);
  EXPECT_LE(max_relative_error(g.value_map, numeric_gradient(loss, b.value)), 1e-4);
  EXPECT_LE(max_relative_error(g.gate, numeric_gradient(loss, b.params.gate)), 1e-4);
  int idx = 0;
  DeformableAttnParams::for_each_pair(b.params.attention, g.attention, [&](Tensor& w, const Tensor& gw) {
    EXPECT_LE(max_relative_error(gw, numeric_gradient(loss, w)), 1e-4) << "param " << idx;
    ++idx;
  });
}

class TemporalBlockGradient : public ::testing::TestWithParam<std::uint64_t> {};
TEST_P(TemporalBlockGradient, MatchesCentralDifferences) {
  testing::BlockCase b = testing::make_block_case(GetParam(), false);
  check_block(b);
}
INSTANTIATE_TEST_SUITE_P(Seeds, TemporalBlockGradient, ::testing::Range<std::uint64_t>(0, 25));

class V2xBlockGradient : public ::testing::TestWithParam<std::uint64_t> {};
TEST_P(V2xBlockGradient, MatchesCentralDifferences) {
  testing::BlockCase b = testing::make_block_case(1000 + GetParam(), true);
  check_block(b);
}
INSTANTIATE_TEST_SUITE_P(Seeds, V2xBlockGradient, ::testing::Range<std::uint64_t>(0, 25));

TEST(V2xMessage, RoundTripIsBitExact) {
  BEVFeature f = make_feature(5, 6, 3, {12.5, -3.25, 0.785}, 30);
  f.agent_id = 7;
  f.timestamp = 42;
  // Values representable in f32 survive exactly.
  for (double& v : f.data.values()) v = static_cast<float>(v);
  const auto bytes = encode_message(f);
  EXPECT_EQ(bytes.size(), kMessageHeaderBytes + 4 * 5 * 6 * 3);
  const BEVFeature g = decode_message(bytes, BEVGrid{5, 6, 1.0, {}}, 3);
  EXPECT_EQ(g.agent_id, 7);
  EXPECT_EQ(g.timestamp, 42);
  EXPECT_EQ(g.grid.origin.x, 12.5);
  EXPECT_EQ(g.grid.origin.y, -3.25);
  EXPECT_EQ(g.grid.origin.yaw, 0.785);
  EXPECT_EQ(g.data, f.data);
  EXPECT_EQ(encode_message(g), bytes);
}

TEST(V2xMessage, LayoutIsLittleEndian) {
  BEVFeature f{{2, 2, 1.0, {1.0, 0.0, 0.0}}, Tensor({2, 2, 1}), 0x01020304, 5};
  f.data[0] = 1.0;
  const auto b = encode_message(f);
  EXPECT_EQ(b[0], 0x04);
  EXPECT_EQ(b[3], 0x01);
  EXPECT_EQ(b[4], 5);
  // 1.0 as f64 is 0x3FF0000000000000.
  EXPECT_EQ(b[8 + 7], 0x3F);
  EXPECT_EQ(b[8 + 6], 0xF0);
  // 1.0f is 0x3F800000.
  EXPECT_EQ(b[32 + 3], 0x3F);
  EXPECT_EQ(b[32 + 2], 0x80);
}

TEST(V2xMessage, WrongLengthIsRejected) {
  const BEVFeature f = make_feature(3, 3, 2, {}, 31);
  auto bytes = encode_message(f);
  bytes.pop_back();
  EXPECT_THROW(decode_message(bytes, f.grid, 2), MessageError);
  EXPECT_THROW(decode_message(encode_message(f), f.grid, 3), MessageError);
}

}  // namespace
}  // namespace coop
