#pragma once

// Temporal and vehicle/infrastructure fusion of BEV feature maps.

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "coop/attention.hpp"
#include "coop/geometry.hpp"
#include "coop/tensor.hpp"

namespace coop {

// out = query + mask * gate (.) deformable_attention(query -> value map at own cell)
// Rows with mask 0 are copied through untouched.
struct GatedBlockParams {
  DeformableAttnParams attention;
  Tensor gate;  // [C], zero at initialization
};

namespace detail {

inline std::vector<GridPoint> own_cells(const BEVGrid& g) {
  std::vector<GridPoint> refs;
  refs.reserve(g.cells());
  for (std::size_t i = 0; i < g.height; ++i)
    for (std::size_t j = 0; j < g.width; ++j) refs.push_back({double(i), double(j)});
  return refs;
}

inline void check_mask(std::span<const double> mask, std::size_t rows) {
  if (!mask.empty() && mask.size() != rows) {
    throw DimensionError("gated block: mask has " + std::to_string(mask.size()) + " entries for " +
                         std::to_string(rows) + " rows");
  }
}

}  // namespace detail

// query: [N x C]; value_map: [H x W x C]; refs: N points; mask: empty (all ones) or N entries.
inline Tensor gated_attention_block(const Tensor& query, const Tensor& value_map,
                                    const std::vector<GridPoint>& refs, std::span<const double> mask,
                                    const GatedBlockParams& p, AttentionAudit* audit = nullptr) {
  detail::check_mask(mask, query.dim(0));
  if (p.gate.size() != query.dim(1)) throw DimensionError("gated block: gate size differs from channels");
  Tensor out = query;
  bool open = false;
  for (double g : p.gate.values()) open = open || g != 0.0;
  if (!open && !audit) return out;
  const Tensor upd = deformable_attention(query, value_map, refs, p.attention, audit);
  const std::size_t c = query.dim(1);
  for (std::size_t n = 0; n < query.dim(0); ++n) {
    const double m = mask.empty() ? 1.0 : mask[n];
    if (m == 0.0) continue;
    for (std::size_t ch = 0; ch < c; ++ch) out(n, ch) += m * p.gate[ch] * upd(n, ch);
  }
  return out;
}

struct GatedBlockGrads {
  Tensor query;
  Tensor value_map;
  DeformableAttnParams attention;
  Tensor gate;
};

inline GatedBlockGrads gated_attention_block_backward(const Tensor& query, const Tensor& value_map,
                                                      const std::vector<GridPoint>& refs,
                                                      std::span<const double> mask, const GatedBlockParams& p,
                                                      const Tensor& upstream) {
  detail::check_mask(mask, query.dim(0));
  const std::size_t c = query.dim(1);
  const Tensor upd = deformable_attention(query, value_map, refs, p.attention);
  Tensor d_upd(upstream.shape());
  GatedBlockGrads g{upstream, {}, {}, Tensor({c})};
  for (std::size_t n = 0; n < query.dim(0); ++n) {
    const double m = mask.empty() ? 1.0 : mask[n];
    for (std::size_t ch = 0; ch < c; ++ch) {
      d_upd(n, ch) = m * p.gate[ch] * upstream(n, ch);
      g.gate[ch] += m * upd(n, ch) * upstream(n, ch);
    }
  }
  auto ag = deformable_attention_backward(query, value_map, refs, p.attention, d_upd);
  g.query += ag.query;
  g.value_map = std::move(ag.value_maps.front());
  g.attention = std::move(ag.params);
  return g;
}

struct FusionParams {
  GatedBlockParams temporal;
  GatedBlockParams v2x;

  static FusionParams seeded(std::size_t channels, std::size_t heads, std::size_t points, RngSeed seed) {
    return {{DeformableAttnParams::seeded(channels, heads, points, 1, derive(seed, 1)), Tensor({channels})},
            {DeformableAttnParams::seeded(channels, heads, points, 1, derive(seed, 2)), Tensor({channels})}};
  }
};

// ---------------------------------------------------------------------------
// Temporal fusion.

struct TemporalState {
  std::optional<BEVFeature> prev;
  Pose2D prev_pose{};

  void advance(const BEVFeature& fused) {
    prev = fused;
    prev_pose = fused.grid.origin;
  }
};

// B_{t-1} aligned into the current frame (static scene alignment).
inline WarpResult align_previous(const BEVFeature& current, const TemporalState& state) {
  if (!state.prev) throw std::logic_error("align_previous: no history");
  BEVFeature prev = *state.prev;
  prev.grid.origin = state.prev_pose;
  if (!prev.grid.same_geometry(current.grid) || prev.channels() != current.channels()) {
    throw GeometryError("temporal_fuse: previous and current BEV grids differ");
  }
  return warp_bev_masked(prev, relative_transform(state.prev_pose, current.grid.origin), current.grid);
}

inline BEVFeature temporal_fuse(const BEVFeature& current, const TemporalState& state,
                                const GatedBlockParams& params, AttentionAudit* audit = nullptr) {
  current.validate();
  if (!state.prev) return current;
  const WarpResult aligned = align_previous(current, state);
  const std::size_t c = current.channels();
  const Tensor q = current.data.reshaped({current.grid.cells(), c});
  const Tensor out = gated_attention_block(q, aligned.feature.data, detail::own_cells(current.grid), {}, params, audit);
  BEVFeature r = current;
  r.data = out.reshaped(current.data.shape());
  return r;
}

// ---------------------------------------------------------------------------
// Vehicle / infrastructure fusion.

inline WarpResult align_infrastructure(const BEVFeature& inf, const Pose2D& inf_pose, const Pose2D& ego_pose) {
  BEVFeature src = inf;
  src.grid.origin = inf_pose;
  BEVGrid target = inf.grid;
  target.origin = ego_pose;
  return warp_bev_masked(src, relative_transform(inf_pose, ego_pose), target);
}

inline BEVFeature v2x_fuse(const BEVFeature& ego, const BEVFeature& inf_aligned, const Tensor& mask,
                           const GatedBlockParams& params, AttentionAudit* audit = nullptr) {
  ego.validate();
  if (ego.data.shape() != inf_aligned.data.shape()) {
    throw DimensionError("v2x_fuse: ego " + shape_str(ego.data.shape()) + " vs infrastructure " +
                         shape_str(inf_aligned.data.shape()));
  }
  if (mask.size() != ego.grid.cells()) throw DimensionError("v2x_fuse: mask size differs from grid");
  const std::size_t c = ego.channels();
  const Tensor q = ego.data.reshaped({ego.grid.cells(), c});
  const Tensor out =
      gated_attention_block(q, inf_aligned.data, detail::own_cells(ego.grid), mask.values(), params, audit);
  BEVFeature r = ego;
  r.data = out.reshaped(ego.data.shape());
  return r;
}

// ---------------------------------------------------------------------------
// V2X message: the BEV payload exchanged between agents.
//
//   u32 agent_id | u32 timestamp | f64 x | f64 y | f64 yaw | f32 * (H*W*C)
//
// All fields little-endian; the payload is the row-major [H x W x C] map.

class MessageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

template <typename U>
U get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  U v = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<U>(in[pos + b]) << (8 * b);
  pos += sizeof(U);
  return v;
}

}  // namespace detail

inline constexpr std::size_t kMessageHeaderBytes = 4 + 4 + 3 * 8;

inline std::vector<std::uint8_t> encode_message(const BEVFeature& f) {
  f.validate();
  std::vector<std::uint8_t> out;
  out.reserve(kMessageHeaderBytes + 4 * f.data.size());
  detail::put_le(out, static_cast<std::uint32_t>(f.agent_id));
  detail::put_le(out, static_cast<std::uint32_t>(f.timestamp));
  for (double v : {f.grid.origin.x, f.grid.origin.y, f.grid.origin.yaw})
    detail::put_le(out, std::bit_cast<std::uint64_t>(v));
  for (double v : f.data.values())
    detail::put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

// `grid` supplies the geometry (H, W, resolution); its origin is replaced by
// the pose carried in the message.
inline BEVFeature decode_message(std::span<const std::uint8_t> bytes, const BEVGrid& grid, std::size_t channels) {
  const std::size_t expect = kMessageHeaderBytes + 4 * grid.cells() * channels;
  if (bytes.size() != expect) {
    throw MessageError("V2X message has " + std::to_string(bytes.size()) + " bytes, expected " +
                       std::to_string(expect));
  }
  std::size_t pos = 0;
  BEVFeature f;
  f.agent_id = static_cast<int>(detail::get_le<std::uint32_t>(bytes, pos));
  f.timestamp = static_cast<int>(detail::get_le<std::uint32_t>(bytes, pos));
  f.grid = grid;
  f.grid.origin.x = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos));
  f.grid.origin.y = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos));
  f.grid.origin.yaw = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos));
  f.data = Tensor({grid.height, grid.width, channels});
  for (double& v : f.data.values()) v = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, pos));
  return f;
}

inline std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace coop
