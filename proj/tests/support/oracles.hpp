#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance suite. They avoid the library's own geometry helpers.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <tuple>
#include <vector>

#include "coop/accident.hpp"
#include "coop/tensor.hpp"

namespace coop::testing {

// ---------------------------------------------------------------------------
// Rectangle distance by dense boundary sampling.

inline bool inside_rect(const Box& b, Vec2 p) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = p.x - b.x, dy = p.y - b.y;
  const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.length && std::abs(ly) <= 0.5 * b.width;
}

inline std::vector<Vec2> boundary_samples(const Box& b, std::size_t per_edge) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.length, hw = 0.5 * b.width;
  const Vec2 corners[4] = {{hl, -hw}, {hl, hw}, {-hl, hw}, {-hl, -hw}};
  std::vector<Vec2> out;
  for (int k = 0; k < 4; ++k) {
    const Vec2 a = corners[k], e = corners[(k + 1) % 4];
    for (std::size_t i = 0; i < per_edge; ++i) {
      const double t = double(i) / double(per_edge);
      const double lx = a.x + t * (e.x - a.x), ly = a.y + t * (e.y - a.y);
      out.push_back({b.x + c * lx - s * ly, b.y + s * lx + c * ly});
    }
  }
  return out;
}

inline double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const double abx = b.x - a.x, aby = b.y - a.y;
  double t = ((p.x - a.x) * abx + (p.y - a.y) * aby) / (abx * abx + aby * aby);
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * abx), p.y - (a.y + t * aby));
}

inline double sampled_distance(const Box& a, const Box& b, std::size_t per_edge = 4000) {
  const auto sa = boundary_samples(a, per_edge), sb = boundary_samples(b, per_edge);
  for (const Vec2 p : sa)
    if (inside_rect(b, p)) return 0.0;
  for (const Vec2 p : sb)
    if (inside_rect(a, p)) return 0.0;
  // Distance from samples of each boundary to the exact other boundary.
  auto to_edges = [](const std::vector<Vec2>& samples, const Box& other) {
    const auto corners = boundary_samples(other, 1);
    double best = std::numeric_limits<double>::infinity();
    for (const Vec2 p : samples)
      for (int k = 0; k < 4; ++k) best = std::min(best, segment_distance(p, corners[k], corners[(k + 1) % 4]));
    return best;
  };
  return std::min(to_edges(sa, b), to_edges(sb, a));
}

inline std::pair<Box, Box> random_rectangle_pair(RngSeed seed) {
  auto rnd = [&](std::uint64_t k, double lo, double hi) { return lo + (hi - lo) * counter_uniform(seed, k); };
  return {Box{rnd(0, -3, 3), rnd(1, -3, 3), rnd(2, 0.5, 5), rnd(3, 0.5, 2.5), rnd(4, -3.1, 3.1)},
          Box{rnd(5, -3, 3), rnd(6, -3, 3), rnd(7, 0.5, 5), rnd(8, 0.5, 2.5), rnd(9, -3.1, 3.1)}};
}

// ---------------------------------------------------------------------------
// Collision events: all pairs, all frames, first crossing per pair.

inline std::vector<CollisionEvent> all_pairs_scan(const AgentTrajectories& t, double threshold) {
  std::vector<CollisionEvent> out;
  const std::size_t n = t.ids.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (const auto& f : t.frames) {
        const auto fa = footprint(f.boxes[i]), fb = footprint(f.boxes[j]);
        const double d = min_distance(fa, fb);
        if (d < threshold) {
          const auto key = std::minmax(t.ids[i], t.ids[j]);
          out.push_back({key.first, key.second, f.timestamp, contact_point(fa, fb), d});
          break;
        }
      }
  std::sort(out.begin(), out.end(), [](const CollisionEvent& x, const CollisionEvent& y) {
    return std::tie(x.timestamp, x.id_a, x.id_b) < std::tie(y.timestamp, y.id_a, y.id_b);
  });
  return out;
}

struct ScriptedScene {
  AgentTrajectories trajectories;
  double threshold = 0.5;
};

// Up to 5 constant-velocity agents over up to 20 frames.
inline ScriptedScene random_scripted_scene(RngSeed seed) {
  const std::size_t n = 1 + static_cast<std::size_t>(5 * counter_uniform(seed, 0));
  const int frames = 1 + static_cast<int>(20 * counter_uniform(seed, 1));
  ScriptedScene scene;
  AgentTrajectories& t = scene.trajectories;
  std::vector<Box> start;
  std::vector<Vec2> vel;
  for (std::size_t a = 0; a < n; ++a) {
    t.ids.push_back(static_cast<int>(3 * a) + 1);
    start.push_back({12 * counter_uniform(seed, 10 + a) - 6, 12 * counter_uniform(seed, 20 + a) - 6,
                     1 + 3 * counter_uniform(seed, 30 + a), 0.8 + counter_uniform(seed, 40 + a),
                     6 * counter_uniform(seed, 50 + a)});
    vel.push_back({counter_uniform(seed, 60 + a) - 0.5, counter_uniform(seed, 70 + a) - 0.5});
  }
  for (int f = 0; f < frames; ++f) {
    TrajectoryFrame fr{f, {}};
    for (std::size_t a = 0; a < n; ++a) {
      Box b = start[a];
      b.x += vel[a].x * f;
      b.y += vel[a].y * f;
      fr.boxes.push_back(b);
    }
    t.frames.push_back(fr);
  }
  scene.threshold = 1.5 * counter_uniform(seed, 2);
  return scene;
}

// ---------------------------------------------------------------------------
// Assignment: every partial injection from tracks to detections.

struct ExhaustiveAssignment {
  std::size_t matches = 0;
  double cost = 0.0;
};

inline ExhaustiveAssignment exhaustive_assignment(const std::vector<Vec2>& tracks, const std::vector<Vec2>& dets,
                                                  double gate) {
  ExhaustiveAssignment best{0, 0.0};
  std::vector<char> used(dets.size(), 0);
  std::function<void(std::size_t, std::size_t, double)> rec = [&](std::size_t t, std::size_t m, double c) {
    if (t == tracks.size()) {
      if (m > best.matches || (m == best.matches && c < best.cost)) best = {m, c};
      return;
    }
    rec(t + 1, m, c);
    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (used[d]) continue;
      const double dist = std::hypot(tracks[t].x - dets[d].x, tracks[t].y - dets[d].y);
      if (dist > gate) continue;
      used[d] = 1;
      rec(t + 1, m + 1, c + dist);
      used[d] = 0;
    }
  };
  rec(0, 0, 0.0);
  return best;
}

struct AssignmentInstance {
  std::vector<Vec2> tracks, dets;
};

// Up to 6 tracks and 6 detections scattered over a few gate radii.
inline AssignmentInstance random_assignment_instance(RngSeed s) {
  const std::size_t nt = static_cast<std::size_t>(counter_uniform(s, 0) * 7.0);
  const std::size_t nd = static_cast<std::size_t>(counter_uniform(s, 1) * 7.0);
  const double spread = 1.0 + 5.0 * counter_uniform(s, 2);
  AssignmentInstance inst;
  for (std::size_t k = 0; k < nt; ++k)
    inst.tracks.push_back({spread * (2 * counter_uniform(s, 10 + k) - 1), spread * (2 * counter_uniform(s, 20 + k) - 1)});
  for (std::size_t k = 0; k < nd; ++k)
    inst.dets.push_back({spread * (2 * counter_uniform(s, 30 + k) - 1), spread * (2 * counter_uniform(s, 40 + k) - 1)});
  return inst;
}

}  // namespace coop::testing
