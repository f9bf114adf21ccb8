#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "coop/ops.hpp"
#include "coop/tensor.hpp"

namespace coop {

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Wraps into (-pi, pi].
inline double normalize_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  if (a > -kPi && a <= kPi) return a;
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
};

inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline Vec2 rotate(Vec2 p, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * p.x - s * p.y, s * p.x + c * p.y};
}

// Planar rigid pose: position in meters, heading in radians.
struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  friend bool operator==(const Pose2D&, const Pose2D&) = default;
};

inline Pose2D compose(const Pose2D& a, const Pose2D& b) {
  const Vec2 t = rotate({b.x, b.y}, a.yaw);
  return {a.x + t.x, a.y + t.y, normalize_angle(a.yaw + b.yaw)};
}

inline Pose2D inverse(const Pose2D& p) {
  const Vec2 t = rotate({-p.x, -p.y}, -p.yaw);
  return {t.x, t.y, normalize_angle(-p.yaw)};
}

// Maps a point expressed in the pose's frame into the parent frame.
inline Vec2 transform_point(const Pose2D& p, Vec2 local) {
  return Vec2{p.x, p.y} + rotate(local, p.yaw);
}

// T with compose(to, T) == from: carries `from`-frame coordinates into the `to` frame.
inline Pose2D relative_transform(const Pose2D& from, const Pose2D& to) {
  return compose(inverse(to), from);
}

// ---------------------------------------------------------------------------
// BEV grid. Row index i runs along the local y axis and column index j along
// local x; the grid center sits at the origin pose.

struct BEVGrid {
  std::size_t height = 50;
  std::size_t width = 50;
  double resolution = 1.0;
  Pose2D origin{};

  void validate() const {
    if (height < 2 || width < 2) throw GeometryError("BEV grid needs at least 2x2 cells");
    if (!(resolution > 0.0)) throw GeometryError("BEV grid resolution must be positive");
  }
  std::size_t cells() const { return height * width; }
  bool same_geometry(const BEVGrid& o) const {
    return height == o.height && width == o.width && resolution == o.resolution;
  }
  bool contains(GridPoint p) const {
    return p.u >= 0.0 && p.v >= 0.0 && p.u <= static_cast<double>(height - 1) &&
           p.v <= static_cast<double>(width - 1);
  }
};

inline Vec2 cell_to_local(const BEVGrid& g, GridPoint c) {
  return {(c.v - 0.5 * static_cast<double>(g.width - 1)) * g.resolution,
          (c.u - 0.5 * static_cast<double>(g.height - 1)) * g.resolution};
}

inline GridPoint local_to_cell(const BEVGrid& g, Vec2 p) {
  return {p.y / g.resolution + 0.5 * static_cast<double>(g.height - 1),
          p.x / g.resolution + 0.5 * static_cast<double>(g.width - 1)};
}

inline Vec2 cell_to_world(const BEVGrid& g, GridPoint c) {
  return transform_point(g.origin, cell_to_local(g, c));
}

inline GridPoint world_to_cell(const BEVGrid& g, Vec2 world) {
  const Pose2D inv = inverse(g.origin);
  return local_to_cell(g, transform_point(inv, world));
}

// Feature map tied to an agent pose (the grid origin) and a frame index.
struct BEVFeature {
  BEVGrid grid;
  Tensor data;  // [H x W x C]
  int agent_id = 0;
  int timestamp = 0;

  std::size_t channels() const { return data.dim(2); }

  void validate() const {
    grid.validate();
    if (data.rank() != 3 || data.dim(0) != grid.height || data.dim(1) != grid.width) {
      throw DimensionError("BEV feature " + shape_str(data.shape()) + " does not match grid " +
                           std::to_string(grid.height) + "x" + std::to_string(grid.width));
    }
  }
};

struct WarpResult {
  BEVFeature feature;
  Tensor mask;  // [H x W], 1 where the source map covers the cell
};

namespace detail {
inline double snap(double x) {
  const double r = std::round(x);
  return std::abs(x - r) <= 1e-9 ? r : x;
}
}  // namespace detail

// Resamples `feat` into the frame reached by T, where T carries source-frame
// coordinates into target-frame coordinates (see relative_transform).
inline WarpResult warp_bev_masked(const BEVFeature& feat, const Pose2D& transform,
                                  const BEVGrid& target) {
  feat.validate();
  if (!target.same_geometry(feat.grid)) throw GeometryError("warp_bev: grid geometry mismatch");
  const BEVGrid& src = feat.grid;
  const Pose2D target_to_source = inverse(transform);
  WarpResult r{{target, Tensor(feat.data.shape()), feat.agent_id, feat.timestamp},
               Tensor({target.height, target.width})};
  std::vector<GridPoint> pts(target.cells());
  for (std::size_t i = 0; i < target.height; ++i) {
    for (std::size_t j = 0; j < target.width; ++j) {
      const Vec2 local = cell_to_local(target, {double(i), double(j)});
      GridPoint s = local_to_cell(src, transform_point(target_to_source, local));
      pts[i * target.width + j] = {detail::snap(s.u), detail::snap(s.v)};
    }
  }
  const Tensor sampled = bilinear_sample(feat.data, pts);
  std::copy(sampled.values().begin(), sampled.values().end(), r.feature.data.values().begin());
  for (std::size_t k = 0; k < pts.size(); ++k) r.mask[k] = src.contains(pts[k]) ? 1.0 : 0.0;
  return r;
}

inline WarpResult warp_bev_masked(const BEVFeature& feat, const Pose2D& transform) {
  BEVGrid target = feat.grid;
  target.origin = compose(feat.grid.origin, inverse(transform));
  return warp_bev_masked(feat, transform, target);
}

inline BEVFeature warp_bev(const BEVFeature& feat, const Pose2D& transform) {
  return warp_bev_masked(feat, transform).feature;
}

inline BEVFeature warp_bev(const BEVFeature& feat, const Pose2D& transform, const BEVGrid& target) {
  return warp_bev_masked(feat, transform, target).feature;
}

// ---------------------------------------------------------------------------
// Cameras. Each view is a horizontal pinhole camera (no roll or pitch)
// mounted on the agent.

struct CameraView {
  Pose2D mount{};             // relative to the agent pose
  double mount_height = 1.6;  // meters above ground
  double hfov = 1.2;          // radians
  std::size_t image_width = 96;
  std::size_t image_height = 64;
  double focal = 0.0;  // pixels

  static CameraView make(Pose2D mount, double height, double hfov, std::size_t w, std::size_t h) {
    if (!(hfov > 0.0 && hfov < std::numbers::pi)) throw GeometryError("camera FOV must be in (0, pi)");
    return {mount, height, hfov, w, h, 0.5 * static_cast<double>(w) / std::tan(0.5 * hfov)};
  }
};

struct CameraRig {
  std::vector<CameraView> views;

  void validate(std::size_t expected_views) const {
    if (views.size() != expected_views) {
      throw GeometryError("camera rig has " + std::to_string(views.size()) + " views, expected " +
                          std::to_string(expected_views));
    }
    for (const auto& v : views) {
      if (!(v.hfov > 0.0 && v.hfov < std::numbers::pi)) throw GeometryError("camera FOV must be in (0, pi)");
    }
  }
};

// Views evenly spaced in yaw, the first one facing forward.
inline CameraRig make_ring_rig(std::size_t n_views, double mount_height, double hfov,
                               std::size_t image_width, std::size_t image_height) {
  CameraRig rig;
  for (std::size_t k = 0; k < n_views; ++k) {
    const double yaw = normalize_angle(2.0 * std::numbers::pi * double(k) / double(n_views));
    rig.views.push_back(
        CameraView::make({0.0, 0.0, yaw}, mount_height, hfov, image_width, image_height));
  }
  return rig;
}

struct PixelProjection {
  double u = 0.0;  // column, pixels
  double v = 0.0;  // row, pixels
  bool visible = false;
};

inline PixelProjection project_point(const CameraView& view, const Pose2D& agent_pose, Vec2 world,
                                     double z) {
  const Pose2D cam = compose(agent_pose, view.mount);
  const Vec2 p = transform_point(inverse(cam), world);
  if (p.x <= 1e-6) return {};
  const double cx = 0.5 * static_cast<double>(view.image_width);
  const double cy = 0.5 * static_cast<double>(view.image_height);
  PixelProjection r;
  r.u = cx - view.focal * p.y / p.x;
  r.v = cy - view.focal * (z - view.mount_height) / p.x;
  r.visible = r.u >= 0.0 && r.u < static_cast<double>(view.image_width) && r.v >= 0.0 &&
              r.v < static_cast<double>(view.image_height);
  return r;
}

// Projects the vertical pillar through a BEV cell center into one view.
inline std::vector<PixelProjection> project_pillar(const BEVGrid& grid, std::size_t i,
                                                   std::size_t j, std::span<const double> heights,
                                                   const CameraRig& rig, std::size_t view) {
  if (i >= grid.height || j >= grid.width) throw GeometryError("project_pillar: cell out of range");
  if (view >= rig.views.size()) throw GeometryError("project_pillar: view index out of range");
  const Vec2 world = cell_to_world(grid, {double(i), double(j)});
  std::vector<PixelProjection> out;
  out.reserve(heights.size());
  for (double z : heights) out.push_back(project_point(rig.views[view], grid.origin, world, z));
  return out;
}

}  // namespace coop
