#pragma once

// Multi-modal motion prediction for tracked agents and the ego vehicle.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "coop/attention.hpp"
#include "coop/geometry.hpp"
#include "coop/perception.hpp"
#include "coop/tensor.hpp"

namespace coop {

// Constant-speed templates starting at the origin facing +x. Mode 0 drives
// straight; later modes alternate left and right with growing yaw rate.
struct AnchorSet {
  std::vector<std::vector<Vec2>> trajectories;  // [modes][steps]

  std::size_t modes() const { return trajectories.size(); }
  std::size_t steps() const { return trajectories.empty() ? 0 : trajectories.front().size(); }
};

inline AnchorSet make_anchor_set(std::size_t modes, std::size_t steps, double dt, double speed = 3.0,
                                 double yaw_rate = 0.25) {
  if (modes < 1 || steps < 1) throw std::invalid_argument("anchor set needs at least one mode and one step");
  AnchorSet a;
  for (std::size_t k = 0; k < modes; ++k) {
    const double level = static_cast<double>((k + 1) / 2);
    const double rate = k == 0 ? 0.0 : (k % 2 == 1 ? 1.0 : -1.0) * level * yaw_rate;
    std::vector<Vec2> traj;
    Vec2 p{};
    double yaw = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      // Exact unicycle integration over one step.
      if (rate == 0.0) {
        p = p + Vec2{speed * dt * std::cos(yaw), speed * dt * std::sin(yaw)};
      } else {
        const double r = speed / rate, next = yaw + rate * dt;
        p = p + Vec2{r * (std::sin(next) - std::sin(yaw)), r * (std::cos(yaw) - std::cos(next))};
        yaw = next;
      }
      traj.push_back(p);
    }
    a.trajectories.push_back(std::move(traj));
  }
  return a;
}

// Scene anchor placed at an agent's pose, both expressed in the ego frame.
inline std::vector<Vec2> agent_anchor(const std::vector<Vec2>& scene, const Pose2D& agent_in_ego) {
  std::vector<Vec2> out;
  out.reserve(scene.size());
  for (const Vec2 p : scene) out.push_back(transform_point(agent_in_ego, p));
  return out;
}

// Sinusoidal encoding of a 2D point into C channels (C divisible by 4).
inline void positional_encoding(Vec2 p, std::span<double> out, double max_wavelength = 200.0) {
  const std::size_t quarter = out.size() / 4;
  for (std::size_t k = 0; k < quarter; ++k) {
    const double freq =
        std::pow(max_wavelength, -static_cast<double>(k) / static_cast<double>(std::max<std::size_t>(quarter, 1)));
    out[4 * k + 0] = std::sin(p.x * freq);
    out[4 * k + 1] = std::cos(p.x * freq);
    out[4 * k + 2] = std::sin(p.y * freq);
    out[4 * k + 3] = std::cos(p.y * freq);
  }
}

struct MotionConfig {
  std::size_t channels = 32;
  std::size_t heads = 2;
  std::size_t sample_points = 4;
  std::size_t modes = 3;  // K
  std::size_t steps = 6;  // T
  double dt = 0.5;
  double anchor_speed = 3.0;
};

struct MotionWeights {
  Tensor mode_embedding;  // [Kmax x C]
  MultiHeadAttnParams agent_attention;
  DeformableAttnParams goal_attention;
  Mlp context;  // 2C -> C
  // One projection per positional encoding: scene anchor, agent anchor,
  // current position, predicted endpoint.
  std::array<Tensor, 4> pos_w;  // each [C x C]
  Tensor pos_b;                 // [C]
  Tensor goal_w, goal_b;        // C -> 2, zero at initialization
  Mlp trajectory_decoder;       // C -> T*2, zero output layer at initialization
  Mlp score_head;               // C -> 1, zero output layer at initialization
};

inline MotionWeights make_motion_weights(const MotionConfig& cfg, std::size_t max_modes, RngSeed seed) {
  const std::size_t c = cfg.channels;
  if (c % 4 != 0) throw std::invalid_argument("motion channels must be a multiple of 4");
  MotionWeights w;
  w.mode_embedding = seeded_init({max_modes, c}, derive(seed, 1), Init::uniform(0.5));
  w.agent_attention = MultiHeadAttnParams::seeded(c, cfg.heads, derive(seed, 2));
  w.goal_attention = DeformableAttnParams::seeded(c, cfg.heads, cfg.sample_points, 1, derive(seed, 3));
  w.context = Mlp::seeded(2 * c, 2 * c, c, derive(seed, 4), 0.5);
  for (std::size_t k = 0; k < 4; ++k)
    w.pos_w[k] = seeded_init({c, c}, derive(seed, 10 + k), Init::uniform(0.5 / std::sqrt(double(c))));
  w.pos_b = Tensor({c});
  w.goal_w = Tensor({c, 2});
  w.goal_b = Tensor({2});
  w.trajectory_decoder = Mlp::seeded(c, c, cfg.steps * 2, derive(seed, 5));
  w.trajectory_decoder.w2 = Tensor(w.trajectory_decoder.w2.shape());
  w.score_head = Mlp::seeded(c, c, 1, derive(seed, 6));
  w.score_head.w2 = Tensor(w.score_head.w2.shape());
  return w;
}

// Intermediate query components, rows ordered (agent, mode).
struct MotionQueryParts {
  Tensor q_a, q_g, q_ctx, q_pos;  // [A*K x C]
  // Raw encodings: scene anchor endpoint, agent anchor endpoint, current
  // position, predicted endpoint.
  std::array<Tensor, 4> encodings;  // each [A*K x C]
};

struct MotionOutput {
  std::vector<int> agent_ids;  // track ids, ego last with id -1
  Tensor trajectories;         // [A x K x T x 2], ego frame at prediction time
  Tensor scores;               // [A x K]
  Tensor anchors;              // [A x K x T x 2], agent-level anchors
  MotionQueryParts parts;
};

inline constexpr int kEgoId = -1;

inline MotionOutput predict_motion(const std::vector<TrackQuery>& tracks, const EgoQuery& ego, const BEVFeature& bev,
                                   const AnchorSet& anchors, const MotionWeights& w, std::size_t modes,
                                   std::size_t steps, AttentionAudit* audit = nullptr) {
  if (modes < 1 || steps < 1) throw std::invalid_argument("predict_motion: K and T must be positive");
  if (modes > anchors.modes() || modes > w.mode_embedding.dim(0)) {
    throw std::invalid_argument("predict_motion: K=" + std::to_string(modes) + " exceeds the " +
                                std::to_string(anchors.modes()) + " configured anchors");
  }
  if (steps != anchors.steps() || 2 * steps != w.trajectory_decoder.b2.size()) {
    throw std::invalid_argument("predict_motion: T=" + std::to_string(steps) + " does not match anchors/decoder");
  }
  const std::size_t c = bev.channels();
  const std::size_t na = tracks.size() + 1, rows = na * modes;
  const Pose2D to_ego = inverse(ego.pose);

  MotionOutput out;
  std::vector<Pose2D> poses;  // agent poses in the ego frame
  Tensor agent_feats({na, c});
  for (std::size_t a = 0; a < tracks.size(); ++a) {
    const auto& t = tracks[a];
    out.agent_ids.push_back(t.id);
    const Vec2 p = transform_point(to_ego, t.box.center());
    poses.push_back({p.x, p.y, normalize_angle(t.box.yaw - ego.pose.yaw)});
    std::copy(t.feature.values().begin(), t.feature.values().end(), agent_feats.row(a).begin());
  }
  out.agent_ids.push_back(kEgoId);
  poses.push_back({});
  std::copy(ego.feature.values().begin(), ego.feature.values().end(), agent_feats.row(na - 1).begin());

  out.anchors = Tensor({na, modes, steps, 2});
  Tensor motion_query({rows, c});
  std::vector<GridPoint> goal_refs(rows);
  for (auto& e : out.parts.encodings) e = Tensor({rows, c});
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t k = 0; k < modes; ++k) {
      const std::size_t r = a * modes + k;
      const auto traj = agent_anchor(anchors.trajectories[k], poses[a]);
      for (std::size_t t = 0; t < steps; ++t) {
        out.anchors(a, k, t, 0) = traj[t].x;
        out.anchors(a, k, t, 1) = traj[t].y;
      }
      for (std::size_t ch = 0; ch < c; ++ch) motion_query(r, ch) = agent_feats(a, ch) + w.mode_embedding(k, ch);
      GridPoint g = local_to_cell(bev.grid, traj.back());
      g.u = std::clamp(g.u, 0.0, static_cast<double>(bev.grid.height - 1));
      g.v = std::clamp(g.v, 0.0, static_cast<double>(bev.grid.width - 1));
      goal_refs[r] = g;
      positional_encoding(anchors.trajectories[k].back(), out.parts.encodings[0].row(r));
      positional_encoding(traj.back(), out.parts.encodings[1].row(r));
      positional_encoding({poses[a].x, poses[a].y}, out.parts.encodings[2].row(r));
    }
  }

  out.parts.q_a = multi_head_attention(motion_query, agent_feats, w.agent_attention, audit);
  out.parts.q_g = deformable_attention(motion_query, bev.data, goal_refs, w.goal_attention, audit);
  Tensor joined({rows, 2 * c});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(out.parts.q_a.row(r).begin(), out.parts.q_a.row(r).end(), joined.row(r).begin());
    std::copy(out.parts.q_g.row(r).begin(), out.parts.q_g.row(r).end(), joined.row(r).begin() + c);
  }
  out.parts.q_ctx = w.context(joined);

  const Tensor goal_delta = linear_forward(out.parts.q_ctx, w.goal_w, w.goal_b);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t a = r / modes, k = r % modes;
    const Vec2 end{out.anchors(a, k, steps - 1, 0) + goal_delta(r, 0), out.anchors(a, k, steps - 1, 1) + goal_delta(r, 1)};
    positional_encoding(end, out.parts.encodings[3].row(r));
  }
  out.parts.q_pos = Tensor({rows, c});
  for (std::size_t k = 0; k < 4; ++k) out.parts.q_pos += matmul(out.parts.encodings[k], w.pos_w[k]);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) out.parts.q_pos(r, ch) += w.pos_b[ch];

  const Tensor q_x = out.parts.q_ctx + out.parts.q_pos;
  const Tensor offsets = w.trajectory_decoder(q_x);
  const Tensor logits = w.score_head(q_x);

  out.trajectories = out.anchors;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t a = r / modes, k = r % modes;
    for (std::size_t t = 0; t < steps; ++t) {
      out.trajectories(a, k, t, 0) += offsets(r, 2 * t);
      out.trajectories(a, k, t, 1) += offsets(r, 2 * t + 1);
    }
  }
  out.scores = scaled_softmax_rows(logits.reshaped({na, modes}), 1.0);
  return out;
}

}  // namespace coop
