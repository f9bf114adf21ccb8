#pragma once

// Collision events from box trajectories, and scoring of predicted events.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "coop/geometry.hpp"
#include "coop/motion.hpp"
#include "coop/perception.hpp"

namespace coop {

struct FootprintPolygon {
  std::array<Vec2, 4> vertices;  // counter-clockwise

  double area() const {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += cross(vertices[k], vertices[(k + 1) % 4]);
    return 0.5 * s;
  }
};

inline FootprintPolygon footprint(const Box& b) {
  if (!(b.length > 0.0) || !(b.width > 0.0)) {
    throw std::invalid_argument("footprint: box dimensions must be positive");
  }
  const Pose2D pose{b.x, b.y, b.yaw};
  const double hl = 0.5 * b.length, hw = 0.5 * b.width;
  return {{transform_point(pose, {hl, -hw}), transform_point(pose, {hl, hw}), transform_point(pose, {-hl, hw}),
           transform_point(pose, {-hl, -hw})}};
}

namespace detail {

inline Vec2 closest_on_segment(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  const double t = len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
  return a + t * ab;
}

// Separating-axis test on the edge normals; touching counts as intersecting.
inline bool polygons_intersect(const FootprintPolygon& a, const FootprintPolygon& b) {
  for (const FootprintPolygon* p : {&a, &b}) {
    for (std::size_t k = 0; k < 4; ++k) {
      const Vec2 e = p->vertices[(k + 1) % 4] - p->vertices[k];
      const Vec2 n{-e.y, e.x};
      double amin = std::numeric_limits<double>::infinity(), amax = -amin;
      double bmin = amin, bmax = -amin;
      for (const Vec2 v : a.vertices) amin = std::min(amin, dot(n, v)), amax = std::max(amax, dot(n, v));
      for (const Vec2 v : b.vertices) bmin = std::min(bmin, dot(n, v)), bmax = std::max(bmax, dot(n, v));
      if (amax < bmin || bmax < amin) return false;
    }
  }
  return true;
}

struct ClosestPair {
  double distance = 0.0;
  Vec2 on_a, on_b;
};

inline ClosestPair closest_vertex_edge(const FootprintPolygon& a, const FootprintPolygon& b) {
  ClosestPair best{std::numeric_limits<double>::infinity(), {}, {}};
  auto scan = [&](const FootprintPolygon& from, const FootprintPolygon& to, bool swapped) {
    for (const Vec2 v : from.vertices) {
      for (std::size_t k = 0; k < 4; ++k) {
        const Vec2 q = closest_on_segment(v, to.vertices[k], to.vertices[(k + 1) % 4]);
        const double d = norm(v - q);
        if (d < best.distance) best = swapped ? ClosestPair{d, q, v} : ClosestPair{d, v, q};
      }
    }
  };
  scan(a, b, false);
  scan(b, a, true);
  return best;
}

// Convex clip of a by b (both counter-clockwise).
inline std::vector<Vec2> clip_convex(const FootprintPolygon& a, const FootprintPolygon& b) {
  std::vector<Vec2> out(a.vertices.begin(), a.vertices.end());
  for (std::size_t e = 0; e < 4 && !out.empty(); ++e) {
    const Vec2 p0 = b.vertices[e], p1 = b.vertices[(e + 1) % 4];
    const std::vector<Vec2> in = out;
    out.clear();
    for (std::size_t k = 0; k < in.size(); ++k) {
      const Vec2 p = in[k], q = in[(k + 1) % in.size()];
      const double sp = cross(p1 - p0, p - p0), sq = cross(p1 - p0, q - p0);
      if (sp >= 0.0) out.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) out.push_back(p + (sp / (sp - sq)) * (q - p));
    }
  }
  return out;
}

}  // namespace detail

inline double min_distance(const FootprintPolygon& a, const FootprintPolygon& b) {
  if (detail::polygons_intersect(a, b)) return 0.0;
  return detail::closest_vertex_edge(a, b).distance;
}

// Where two footprints meet: the midpoint of the closest points, or the
// centroid of the overlap when they intersect.
inline Vec2 contact_point(const FootprintPolygon& a, const FootprintPolygon& b) {
  if (detail::polygons_intersect(a, b)) {
    const auto poly = detail::clip_convex(a, b);
    double area2 = 0.0;
    Vec2 c{};
    for (std::size_t k = 0; k < poly.size(); ++k) {
      const Vec2 p = poly[k], q = poly[(k + 1) % poly.size()];
      const double w = cross(p, q);
      area2 += w;
      c = c + w * (p + q);
    }
    if (std::abs(area2) > 1e-12) return (1.0 / (3.0 * area2)) * c;
  }
  const auto cp = detail::closest_vertex_edge(a, b);
  return 0.5 * (cp.on_a + cp.on_b);
}

struct CollisionEvent {
  int id_a = 0;  // id_a < id_b
  int id_b = 0;
  int timestamp = 0;
  Vec2 position{};
  double min_distance = 0.0;

  friend bool operator==(const CollisionEvent&, const CollisionEvent&) = default;
};

// Boxes of every agent at one timestamp.
struct TrajectoryFrame {
  int timestamp = 0;
  std::vector<Box> boxes;
};

struct AgentTrajectories {
  std::vector<int> ids;                // one per agent
  std::vector<TrajectoryFrame> frames;  // boxes in ids order
};

// Each agent checks the other agents nearest-first and stops at the first one
// at or beyond the threshold, so every pair below the threshold is found. A
// pair reports only the first frame it falls below the threshold.
inline std::vector<CollisionEvent> detect_collisions(const AgentTrajectories& traj, double threshold) {
  if (threshold < 0.0) throw std::invalid_argument("detect_collisions: negative threshold");
  std::vector<CollisionEvent> events;
  std::map<std::pair<int, int>, bool> reported;
  const std::size_t n = traj.ids.size();
  for (const auto& frame : traj.frames) {
    if (frame.boxes.size() != n) throw std::invalid_argument("detect_collisions: frame box count differs from ids");
    std::vector<FootprintPolygon> fp;
    fp.reserve(n);
    for (const auto& b : frame.boxes) fp.push_back(footprint(b));
    std::vector<CollisionEvent> found;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::pair<double, std::size_t>> others;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) others.emplace_back(min_distance(fp[i], fp[j]), j);
      std::sort(others.begin(), others.end());
      for (const auto& [d, j] : others) {
        if (!(d < threshold)) break;
        const auto key = std::minmax(traj.ids[i], traj.ids[j]);
        if (reported[key]) continue;
        reported[key] = true;
        found.push_back({key.first, key.second, frame.timestamp, contact_point(fp[i], fp[j]), d});
      }
    }
    std::sort(found.begin(), found.end(),
              [](const CollisionEvent& x, const CollisionEvent& y) { return std::tie(x.id_a, x.id_b) < std::tie(y.id_a, y.id_b); });
    events.insert(events.end(), found.begin(), found.end());
  }
  return events;
}

// ---------------------------------------------------------------------------
// Predicted events from motion output.

enum class ModePolicy { kTop1, kAnyMode };

// Boxes along one predicted trajectory. The first future step keeps the
// current heading; later steps face along the displacement.
inline std::vector<Box> trajectory_boxes(const Tensor& traj, std::size_t agent, std::size_t mode, const Box& current) {
  const std::size_t steps = traj.dim(2);
  std::vector<Box> out;
  double yaw = current.yaw;
  Vec2 prev{traj(agent, mode, 0, 0), traj(agent, mode, 0, 1)};
  for (std::size_t t = 0; t < steps; ++t) {
    const Vec2 p{traj(agent, mode, t, 0), traj(agent, mode, t, 1)};
    if (t > 0) {
      const Vec2 d = p - prev;
      if (norm(d) > 1e-9) yaw = std::atan2(d.y, d.x);
    }
    out.push_back({p.x, p.y, current.length, current.width, yaw});
    prev = p;
  }
  return out;
}

// `current` holds each agent's box in the ego frame, ordered as motion.agent_ids.
// Event timestamps are frame + step (steps counted from 1); positions are
// reported in the world frame through `ego_pose`.
inline std::vector<CollisionEvent> predict_accident(const MotionOutput& motion, const std::vector<Box>& current,
                                                    const Pose2D& ego_pose, double threshold, int frame,
                                                    ModePolicy policy = ModePolicy::kTop1) {
  const std::size_t na = motion.agent_ids.size();
  if (current.size() != na) throw std::invalid_argument("predict_accident: one current box per agent required");
  if (na < 2) return {};
  const std::size_t modes = motion.trajectories.dim(1), steps = motion.trajectories.dim(2);
  std::vector<std::vector<std::vector<Box>>> boxes(na);  // [agent][mode][step]
  std::vector<std::size_t> best(na, 0);
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t k = 0; k < modes; ++k) {
      boxes[a].push_back(trajectory_boxes(motion.trajectories, a, k, current[a]));
      if (motion.scores(a, k) > motion.scores(a, best[a])) best[a] = k;
    }
  }
  auto to_world = [&](CollisionEvent e) {
    e.position = transform_point(ego_pose, e.position);
    return e;
  };
  if (policy == ModePolicy::kTop1) {
    AgentTrajectories traj{motion.agent_ids, {}};
    for (std::size_t t = 0; t < steps; ++t) {
      TrajectoryFrame f{frame + static_cast<int>(t) + 1, {}};
      for (std::size_t a = 0; a < na; ++a) f.boxes.push_back(boxes[a][best[a]][t]);
      traj.frames.push_back(std::move(f));
    }
    auto events = detect_collisions(traj, threshold);
    for (auto& e : events) e = to_world(e);
    return events;
  }
  // Any mode pair: per agent pair, the earliest frame over all mode combinations.
  std::vector<CollisionEvent> events;
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t b = a + 1; b < na; ++b) {
      std::optional<CollisionEvent> first;
      for (std::size_t ka = 0; ka < modes; ++ka) {
        for (std::size_t kb = 0; kb < modes; ++kb) {
          for (std::size_t t = 0; t < steps; ++t) {
            if (first && first->timestamp <= frame + static_cast<int>(t) + 1) break;
            const auto fa = footprint(boxes[a][ka][t]), fb = footprint(boxes[b][kb][t]);
            const double d = min_distance(fa, fb);
            if (d < threshold) {
              const auto key = std::minmax(motion.agent_ids[a], motion.agent_ids[b]);
              first = CollisionEvent{key.first, key.second, frame + static_cast<int>(t) + 1, contact_point(fa, fb), d};
              break;
            }
          }
        }
      }
      if (first) events.push_back(to_world(*first));
    }
  }
  std::sort(events.begin(), events.end(), [](const CollisionEvent& x, const CollisionEvent& y) {
    return std::tie(x.timestamp, x.id_a, x.id_b) < std::tie(y.timestamp, y.id_a, y.id_b);
  });
  return events;
}

// ---------------------------------------------------------------------------
// Scoring.

struct MatchedEvent {
  std::size_t pred = 0;
  std::size_t gt = 0;
  int time_error = 0;  // |dt| in frames
  double position_error = 0.0;
};

struct AccidentScore {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::vector<MatchedEvent> matches;
};

inline AccidentScore score(const std::vector<CollisionEvent>& pred, const std::vector<CollisionEvent>& gt,
                           int time_tol = 1, double dist_tol = 2.0) {
  if (time_tol < 0 || dist_tol < 0.0) throw std::invalid_argument("score: tolerances must be non-negative");
  std::vector<MatchedEvent> candidates;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (pred[p].id_a != gt[g].id_a || pred[p].id_b != gt[g].id_b) continue;
      const int dt = std::abs(pred[p].timestamp - gt[g].timestamp);
      const double dp = norm(pred[p].position - gt[g].position);
      if (dt <= time_tol && dp <= dist_tol) candidates.push_back({p, g, dt, dp});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const MatchedEvent& x, const MatchedEvent& y) {
    return std::tie(x.time_error, x.position_error, x.pred, x.gt) <
           std::tie(y.time_error, y.position_error, y.pred, y.gt);
  });
  std::vector<char> pu(pred.size(), 0), gu(gt.size(), 0);
  AccidentScore s;
  for (const auto& c : candidates) {
    if (pu[c.pred] || gu[c.gt]) continue;
    pu[c.pred] = gu[c.gt] = 1;
    s.matches.push_back(c);
  }
  s.true_positives = s.matches.size();
  s.false_positives = pred.size() - s.true_positives;
  s.false_negatives = gt.size() - s.true_positives;
  return s;
}

// ---------------------------------------------------------------------------
// Line records: "t, id_a, id_b, x, y, min_distance".

// Six fractional digits; values that round to zero print without a sign.
inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  if (buf[0] == '-' && std::strspn(buf + 1, "0.") == std::strlen(buf + 1)) return buf + 1;
  return buf;
}

inline std::string format_event(const CollisionEvent& e) {
  return std::to_string(e.timestamp) + ", " + std::to_string(e.id_a) + ", " + std::to_string(e.id_b) + ", " +
         fixed6(e.position.x) + ", " + fixed6(e.position.y) + ", " + fixed6(e.min_distance);
}

inline void write_events(std::ostream& os, const std::vector<CollisionEvent>& events) {
  for (const auto& e : events) os << format_event(e) << '\n';
}

inline CollisionEvent parse_event(const std::string& line) {
  CollisionEvent e;
  if (std::sscanf(line.c_str(), "%d, %d, %d, %lf, %lf, %lf", &e.timestamp, &e.id_a, &e.id_b, &e.position.x,
                  &e.position.y, &e.min_distance) != 6) {
    throw std::runtime_error("malformed event record: " + line);
  }
  return e;
}

inline std::vector<CollisionEvent> read_events(std::istream& is) {
  std::vector<CollisionEvent> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) out.push_back(parse_event(line));
  }
  return out;
}

}  // namespace coop
