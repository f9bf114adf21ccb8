#pragma once

// Query-based detection and tracking on the cooperative BEV map.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "coop/attention.hpp"
#include "coop/geometry.hpp"
#include "coop/tensor.hpp"

namespace coop {

// Oriented box on the ground plane, world frame.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double length = 4.5;
  double width = 2.0;
  double yaw = 0.0;

  Vec2 center() const { return {x, y}; }
};

struct Detection {
  Box box;
  double score = 0.0;
  Tensor feature;  // [C]
  int gt_id = -1;  // set only when ground truth is fed in place of the detector
};

struct TrackQuery {
  int id = 0;
  Tensor feature;  // [C]
  Box box;
  int age = 0;
  double score = 0.0;
  int coast = 0;    // consecutive frames without a matched detection
  Vec2 velocity{};  // world frame, m/s
  int gt_id = -1;
};

struct EgoQuery {
  Tensor feature;  // [C]
  Pose2D pose{};
};

struct PerceptionConfig {
  std::size_t channels = 32;
  std::size_t heads = 2;
  std::size_t sample_points = 4;
  std::size_t det_queries = 16;
  std::size_t layers = 3;
  double tau_det = 0.5;
  double r_gate = 2.0;
  int max_coast = 2;
  double dt = 0.5;
  double prior_length = 4.5;
  double prior_width = 2.0;
};

struct DetectorLayer {
  MultiHeadAttnParams self_attention;
  DeformableAttnParams cross_attention;
  Mlp mlp;
};

struct PerceptionWeights {
  Tensor det_query;  // [Q x C]
  Tensor det_ref;    // [Q x 2], grid coordinates strictly inside the map
  std::vector<DetectorLayer> layers;
  Mlp box_head;    // C -> 6: du, dv, log length, log width, sin yaw, cos yaw offset
  Mlp score_head;  // C -> 1
  Tensor ego_query;  // [C]
  DeformableAttnParams ego_attention;
};

inline PerceptionWeights make_perception_weights(const PerceptionConfig& cfg, const BEVGrid& grid, RngSeed seed) {
  const std::size_t c = cfg.channels, q = cfg.det_queries;
  PerceptionWeights w;
  w.det_query = seeded_init({q, c}, derive(seed, 1), Init::uniform(1.0));
  w.det_ref = Tensor({q, 2});
  for (std::size_t k = 0; k < q; ++k) {
    w.det_ref(k, 0) = 1.0 + (static_cast<double>(grid.height) - 3.0) * counter_uniform(derive(seed, 2), 2 * k);
    w.det_ref(k, 1) = 1.0 + (static_cast<double>(grid.width) - 3.0) * counter_uniform(derive(seed, 2), 2 * k + 1);
  }
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const RngSeed ls = derive(seed, 10 + l);
    w.layers.push_back({MultiHeadAttnParams::seeded(c, cfg.heads, derive(ls, 1)),
                        DeformableAttnParams::seeded(c, cfg.heads, cfg.sample_points, 1, derive(ls, 2)),
                        Mlp::seeded(c, 2 * c, c, derive(ls, 3), 0.5)});
  }
  w.box_head = Mlp::seeded(c, c, 6, derive(seed, 3), 0.5);
  w.score_head = Mlp::seeded(c, c, 1, derive(seed, 4));
  w.ego_query = seeded_init({c}, derive(seed, 5), Init::uniform(1.0));
  w.ego_attention = DeformableAttnParams::seeded(c, cfg.heads, cfg.sample_points, 1, derive(seed, 6));
  return w;
}

namespace detail {

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Maps an unbounded head output to a coordinate strictly inside (0, extent - 1),
// centered on the query's reference coordinate.
inline double squash_coordinate(double ref, double delta, std::size_t extent) {
  const double span = static_cast<double>(extent - 1);
  return span * sigmoid(logit(ref / span) + delta);
}

}  // namespace detail

// Runs the decoder and returns every query's box and score, highest-index last.
inline std::vector<Detection> decode_queries(const BEVFeature& bev, const PerceptionWeights& w,
                                             const PerceptionConfig& cfg, AttentionAudit* audit = nullptr) {
  bev.validate();
  const std::size_t nq = w.det_query.dim(0);
  std::vector<GridPoint> refs(nq);
  for (std::size_t k = 0; k < nq; ++k) refs[k] = {w.det_ref(k, 0), w.det_ref(k, 1)};
  Tensor q = w.det_query;
  for (const auto& layer : w.layers) {
    q += multi_head_attention(q, q, layer.self_attention, audit);
    q += deformable_attention(q, bev.data, refs, layer.cross_attention, audit);
    q += layer.mlp(q);
  }
  const Tensor box = w.box_head(q);
  const Tensor score = w.score_head(q);
  std::vector<Detection> out;
  out.reserve(nq);
  for (std::size_t k = 0; k < nq; ++k) {
    const GridPoint cell{detail::squash_coordinate(refs[k].u, box(k, 0), bev.grid.height),
                         detail::squash_coordinate(refs[k].v, box(k, 1), bev.grid.width)};
    const Vec2 world = cell_to_world(bev.grid, cell);
    Detection d;
    d.box = {world.x, world.y, cfg.prior_length * std::exp(std::clamp(box(k, 2), -2.0, 2.0)),
             cfg.prior_width * std::exp(std::clamp(box(k, 3), -2.0, 2.0)),
             normalize_angle(bev.grid.origin.yaw + std::atan2(box(k, 4), 1.0 + box(k, 5)))};
    d.score = sigmoid(score(k, 0));
    d.feature = Tensor({cfg.channels});
    const auto row = q.row(k);
    std::copy(row.begin(), row.end(), d.feature.values().begin());
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<Detection> detect(const BEVFeature& bev, const PerceptionWeights& w, const PerceptionConfig& cfg,
                                     AttentionAudit* audit = nullptr) {
  std::vector<Detection> all = decode_queries(bev, w, cfg, audit);
  std::erase_if(all, [&](const Detection& d) { return d.score < cfg.tau_det; });
  return all;
}

// Ground-truth boxes standing in for the detector; features are read from the
// BEV map at each box center.
inline std::vector<Detection> oracle_detections(const BEVFeature& bev, const std::vector<Box>& boxes,
                                                const std::vector<int>& gt_ids) {
  if (boxes.size() != gt_ids.size()) throw std::invalid_argument("oracle_detections: ids and boxes differ in count");
  std::vector<Detection> out;
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const GridPoint cell = world_to_cell(bev.grid, boxes[k].center());
    const GridPoint pts[1] = {cell};
    Detection d{boxes[k], 1.0, bilinear_sample(bev.data, pts).reshaped({bev.channels()}), gt_ids[k]};
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Assignment.

// Minimum-cost perfect assignment on a square matrix (Hungarian method with
// potentials). Returns col_for_row.
inline std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_for_row(n);
  for (std::size_t j = 1; j <= n; ++j) col_for_row[p[j] - 1] = j - 1;
  return col_for_row;
}

struct Assignment {
  std::vector<int> det_for_track;  // -1 if unmatched
  std::vector<int> track_for_det;  // -1 if unmatched
  double total_cost = 0.0;
  std::size_t matches = 0;
};

// Pairs farther apart than `gate` are forbidden. Among the feasible matchings
// the one with the most pairs wins; ties are broken by total distance.
inline Assignment assign_gated(const std::vector<Vec2>& tracks, const std::vector<Vec2>& dets, double gate) {
  Assignment a{std::vector<int>(tracks.size(), -1), std::vector<int>(dets.size(), -1), 0.0, 0};
  const std::size_t n = std::max(tracks.size(), dets.size());
  if (tracks.empty() || dets.empty()) return a;
  const double big = (static_cast<double>(n) + 1.0) * (gate + 1.0) * 4.0;
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, big));
  for (std::size_t t = 0; t < tracks.size(); ++t)
    for (std::size_t d = 0; d < dets.size(); ++d) {
      const double dist = norm(tracks[t] - dets[d]);
      if (dist <= gate) cost[t][d] = dist;
    }
  const auto col = hungarian(cost);
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    const std::size_t d = col[t];
    if (d >= dets.size() || cost[t][d] >= big) continue;
    a.det_for_track[t] = static_cast<int>(d);
    a.track_for_det[d] = static_cast<int>(t);
    a.total_cost += cost[t][d];
    ++a.matches;
  }
  return a;
}

// Parameter-free attention of the track feature over {track, detection}.
inline Tensor blend_features(const Tensor& track, const Tensor& det) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(track.size()));
  const double lt = dot(track.values(), track.values()) * scale;
  const double ld = dot(track.values(), det.values()) * scale;
  const double m = std::max(lt, ld);
  const double et = std::exp(lt - m), ed = std::exp(ld - m);
  Tensor out = track;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = (et * track[k] + ed * det[k]) / (et + ed);
  return out;
}

inline Box predict_box(const TrackQuery& t, double dt) {
  Box b = t.box;
  b.x += t.velocity.x * dt;
  b.y += t.velocity.y * dt;
  return b;
}

struct TrackerState {
  std::vector<TrackQuery> tracks;
  int next_id = 0;
};

inline std::vector<TrackQuery> associate(TrackerState& state, const std::vector<Detection>& dets,
                                         const PerceptionConfig& cfg) {
  std::vector<Vec2> predicted, observed;
  for (const auto& t : state.tracks) predicted.push_back(predict_box(t, cfg.dt).center());
  for (const auto& d : dets) observed.push_back(d.box.center());
  const Assignment a = assign_gated(predicted, observed, cfg.r_gate);

  std::vector<TrackQuery> next;
  for (std::size_t k = 0; k < state.tracks.size(); ++k) {
    TrackQuery t = state.tracks[k];
    const int d = a.det_for_track[k];
    if (d >= 0) {
      const Detection& det = dets[static_cast<std::size_t>(d)];
      const double elapsed = cfg.dt * static_cast<double>(t.coast + 1);
      t.velocity = (1.0 / elapsed) * (det.box.center() - t.box.center());
      t.feature = blend_features(t.feature, det.feature);
      t.box = det.box;
      t.score = det.score;
      t.coast = 0;
      t.age += 1;
      if (det.gt_id >= 0) t.gt_id = det.gt_id;
    } else {
      t.coast += 1;
      if (t.coast > cfg.max_coast) continue;
      t.box = predict_box(t, cfg.dt);
    }
    next.push_back(std::move(t));
  }
  for (std::size_t d = 0; d < dets.size(); ++d) {
    if (a.track_for_det[d] >= 0) continue;
    TrackQuery t;
    t.id = state.next_id++;
    t.feature = dets[d].feature;
    t.box = dets[d].box;
    t.age = 1;
    t.score = dets[d].score;
    t.gt_id = dets[d].gt_id;
    next.push_back(std::move(t));
  }
  // Keep the set within the query budget, dropping the longest-coasting tracks first.
  if (next.size() > cfg.det_queries) {
    std::stable_sort(next.begin(), next.end(), [](const TrackQuery& x, const TrackQuery& y) { return x.coast < y.coast; });
    next.resize(cfg.det_queries);
  }
  std::sort(next.begin(), next.end(), [](const TrackQuery& x, const TrackQuery& y) { return x.id < y.id; });
  state.tracks = next;
  return next;
}

// ---------------------------------------------------------------------------
// One perception step.

struct PerceptionState {
  TrackerState tracker;
  std::optional<EgoQuery> ego;
};

struct PerceptionOutput {
  std::vector<TrackQuery> tracks;  // Q_A
  EgoQuery ego;
  std::vector<Detection> detections;
};

inline EgoQuery refresh_ego(const BEVFeature& bev, const std::optional<EgoQuery>& prev, const PerceptionWeights& w,
                            AttentionAudit* audit = nullptr) {
  const std::size_t c = bev.channels();
  Tensor q = (prev ? prev->feature : w.ego_query).reshaped({1, c});
  const GridPoint center = local_to_cell(bev.grid, {0.0, 0.0});
  q += deformable_attention(q, bev.data, {center}, w.ego_attention, audit);
  return {q.reshaped({c}), bev.grid.origin};
}

// The detector always runs; when `oracle` is set its boxes feed the tracker
// instead of the detector output.
inline PerceptionOutput step_perception(const BEVFeature& bev, PerceptionState& state, const PerceptionWeights& w,
                                        const PerceptionConfig& cfg,
                                        const std::optional<std::vector<Detection>>& oracle = std::nullopt,
                                        AttentionAudit* audit = nullptr) {
  PerceptionOutput out;
  out.detections = detect(bev, w, cfg, audit);
  out.tracks = associate(state.tracker, oracle ? *oracle : out.detections, cfg);
  out.ego = refresh_ego(bev, state.ego, w, audit);
  state.ego = out.ego;
  return out;
}

}  // namespace coop
