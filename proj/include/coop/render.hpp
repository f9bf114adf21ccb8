#pragma once

// Ray-cast renderer for scripted scenes: agents are flat-shaded 3D boxes over
// a two-tone sky / ground background.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

#include "coop/bev_encoder.hpp"
#include "coop/scenario.hpp"

namespace coop {

using Rgb = std::array<double, 3>;

inline constexpr Rgb kSkyColor{0.55, 0.70, 0.90};
inline constexpr Rgb kGroundColor{0.30, 0.30, 0.32};

// Fixed, well separated hue per agent id.
inline Rgb agent_color(int id) {
  const double hue = std::fmod(0.61803398875 * double(id + 2), 1.0) * 6.0;
  const double s = 0.75, v = 0.95;
  const int k = static_cast<int>(hue) % 6;
  const double f = hue - std::floor(hue);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (k) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct RayHit {
  double distance = std::numeric_limits<double>::infinity();
  int face = -1;  // 0: side along x, 1: side along y, 2: top
};

// Slab test against an upright box standing on the ground.
inline std::optional<RayHit> intersect_box(const Box& box, double box_height, const std::array<double, 3>& origin,
                                           const std::array<double, 3>& dir) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double ox = origin[0] - box.x, oy = origin[1] - box.y;
  const std::array<double, 3> o{c * ox + s * oy, -s * ox + c * oy, origin[2]};
  const std::array<double, 3> d{c * dir[0] + s * dir[1], -s * dir[0] + c * dir[1], dir[2]};
  const std::array<double, 3> lo{-0.5 * box.length, -0.5 * box.width, 0.0};
  const std::array<double, 3> hi{0.5 * box.length, 0.5 * box.width, box_height};
  double t_in = 0.0, t_out = std::numeric_limits<double>::infinity();
  int face = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-12) {
      if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
      continue;
    }
    double t0 = (lo[a] - o[a]) / d[a], t1 = (hi[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_in) t_in = t0, face = a;
    t_out = std::min(t_out, t1);
    if (t_in > t_out) return std::nullopt;
  }
  if (face < 0) return std::nullopt;  // camera inside the box
  return RayHit{t_in, face};
}

struct RenderTarget {
  Pose2D pose;
  const RigSpec* rig = nullptr;
  int exclude_id = std::numeric_limits<int>::min();  // the observer's own body
};

inline MultiViewImages render_views(const Scenario& scn, int frame, const RenderTarget& target) {
  if (frame < 0 || frame >= scn.frames) {
    throw std::out_of_range("render_views: frame " + std::to_string(frame) + " outside [0, " +
                            std::to_string(scn.frames) + ")");
  }
  struct Solid {
    Box box;
    double height;
    Rgb color;
  };
  std::vector<Solid> solids;
  for (const auto& a : scn.agents) {
    if (a.id == target.exclude_id) continue;
    solids.push_back({box_at(a, frame, scn.dt), a.height, agent_color(a.id)});
  }
  const CameraRig rig = target.rig->build();
  MultiViewImages out;
  out.timestamp = frame;
  static constexpr std::array<double, 3> kFaceShade{0.85, 0.65, 1.0};
  for (const auto& view : rig.views) {
    const Pose2D cam = compose(target.pose, view.mount);
    const double cx = 0.5 * double(view.image_width), cy = 0.5 * double(view.image_height);
    const double cy_yaw = std::cos(cam.yaw), sy_yaw = std::sin(cam.yaw);
    const std::array<double, 3> origin{cam.x, cam.y, view.mount_height};
    Tensor img({view.image_height, view.image_width, 3});
    for (std::size_t r = 0; r < view.image_height; ++r) {
      for (std::size_t col = 0; col < view.image_width; ++col) {
        const double ly = (cx - (double(col) + 0.5)) / view.focal;
        const double lz = (cy - (double(r) + 0.5)) / view.focal;
        const std::array<double, 3> dir{cy_yaw - sy_yaw * ly, sy_yaw + cy_yaw * ly, lz};
        Rgb color = lz < 0.0 ? kGroundColor : kSkyColor;
        double nearest = lz < 0.0 ? -view.mount_height / lz : std::numeric_limits<double>::infinity();
        for (const auto& so : solids) {
          const auto hit = intersect_box(so.box, so.height, origin, dir);
          if (hit && hit->distance < nearest) {
            nearest = hit->distance;
            for (int ch = 0; ch < 3; ++ch) color[ch] = so.color[ch] * kFaceShade[hit->face];
          }
        }
        for (std::size_t ch = 0; ch < 3; ++ch) img(r, col, ch) = color[ch];
      }
    }
    out.views.push_back(std::move(img));
  }
  return out;
}

inline MultiViewImages render_ego(const Scenario& scn, int frame) {
  return render_views(scn, frame, {pose_at(scn.ego(), frame, scn.dt), &scn.ego_rig, kEgoId});
}

inline MultiViewImages render_infrastructure(const Scenario& scn, int frame) {
  return render_views(scn, frame, {scn.infrastructure, &scn.infrastructure_rig});
}

}  // namespace coop
