#pragma once

// SVG figures for a run record: per frame, a BEV energy heatmap and the
// predicted trajectory fans in the ego frame.

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "coop/pipeline.hpp"
#include "coop/render.hpp"

namespace coop {

class PlotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& plot_kinds() {
  static const std::vector<std::string> k{"bev", "traj"};
  return k;
}

inline std::string plot_file_name(int t, const std::string& kind) {
  return "frame_" + std::to_string(t) + "_" + kind + ".svg";
}

namespace detail {

inline std::string f3(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3f", v);
  // Values that round to zero print without a sign.
  if (b[0] == '-' && std::strspn(b + 1, "0.") == std::strlen(b + 1)) return b + 1;
  return b;
}

inline std::string hex_color(const Rgb& c) {
  char b[8];
  auto q = [](double v) { return static_cast<int>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5); };
  std::snprintf(b, sizeof b, "#%02x%02x%02x", q(c[0]), q(c[1]), q(c[2]));
  return b;
}

// Dark blue to yellow.
inline Rgb heat(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return {0.1 + 0.85 * x, 0.1 + 0.8 * x, 0.35 * (1.0 - x) + 0.1};
}

// Events to mark on frame t: ground truth at t, and predictions issued at t.
inline std::vector<CollisionEvent> markers(const RunRecord& r, const FrameRecord& f) {
  std::vector<CollisionEvent> out = f.predicted;
  for (const auto& e : r.events_gt)
    if (e.timestamp == f.t) out.push_back(e);
  return out;
}

}  // namespace detail

// Scene coordinates are ego-frame meters, x forward (drawn up), y left (drawn left).
inline std::string bev_svg(const RunRecord& r, const FrameRecord& f) {
  using detail::f3;
  const std::size_t h = f.bev_energy.dim(0), w = f.bev_energy.dim(1);
  const double px = 8.0;
  double hi = 0.0;
  for (double v : f.bev_energy.values()) hi = std::max(hi, v);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f3(px * h) << "\" height=\"" << f3(px * w)
     << "\" viewBox=\"0 0 " << f3(px * h) << ' ' << f3(px * w) << "\">\n";
  os << "<title>frame " << f.t << " BEV feature energy</title>\n";
  os << "<g id=\"heatmap\">\n";
  // Row i grows along +y (drawn leftwards), column j along +x (drawn upwards).
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      os << "<rect x=\"" << f3(px * double(h - 1 - i)) << "\" y=\"" << f3(px * double(w - 1 - j)) << "\" width=\""
         << f3(px) << "\" height=\"" << f3(px) << "\" fill=\""
         << detail::hex_color(detail::heat(hi > 0 ? f.bev_energy(i, j) / hi : 0.0)) << "\"/>\n";
    }
  }
  os << "</g>\n";
  const auto marks = detail::markers(r, f);
  if (!marks.empty()) {
    const BEVGrid grid = r.config.grid(f.ego_pose);
    os << "<g id=\"collisions\">\n";
    for (const auto& e : marks) {
      const GridPoint c = world_to_cell(grid, e.position);
      os << "<circle cx=\"" << f3(px * (double(h) - 1 - c.u) + px / 2) << "\" cy=\"" << f3(px * (double(w) - 1 - c.v) + px / 2)
         << "\" r=\"" << f3(px) << "\" fill=\"none\" stroke=\"#ff2020\" stroke-width=\"2\"/>\n";
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline std::string trajectory_svg(const RunRecord& r, const FrameRecord& f) {
  using detail::f3;
  const double half_x = 0.5 * r.config.grid_resolution * double(r.config.grid_width);
  const double half_y = 0.5 * r.config.grid_resolution * double(r.config.grid_height);
  const double scale = 8.0;
  const double width = 2 * half_y * scale, height = 2 * half_x * scale;
  // Ego frame (x forward, y left) to canvas (right, down).
  auto sx = [&](Vec2 p) { return f3((half_y - p.y) * scale); };
  auto sy = [&](Vec2 p) { return f3((half_x - p.x) * scale); };
  const Pose2D to_ego = inverse(f.ego_pose);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f3(width) << "\" height=\"" << f3(height)
     << "\" viewBox=\"0 0 " << f3(width) << ' ' << f3(height) << "\">\n";
  os << "<title>frame " << f.t << " predicted trajectories</title>\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << f3(width) << "\" height=\"" << f3(height) << "\" fill=\"#202024\"/>\n";
  os << "<g id=\"boxes\">\n";
  for (const auto& g : f.gt) {
    const Vec2 c = transform_point(to_ego, g.box.center());
    Box b = g.box;
    b.x = c.x, b.y = c.y, b.yaw = g.box.yaw - f.ego_pose.yaw;
    const FootprintPolygon poly = footprint(b);
    os << "<polygon points=\"";
    for (std::size_t k = 0; k < 4; ++k) os << (k ? " " : "") << sx(poly.vertices[k]) << ',' << sy(poly.vertices[k]);
    os << "\" fill=\"" << detail::hex_color(agent_color(g.id)) << "\" fill-opacity=\"0.6\"/>\n";
  }
  os << "</g>\n<g id=\"trajectories\">\n";
  for (const auto& m : f.motion) {
    const std::string color = detail::hex_color(agent_color(m.agent_id < kUnmatchedTrackBase ? m.agent_id : 0));
    for (std::size_t k = 0; k < m.modes.size(); ++k) {
      os << "<polyline points=\"";
      for (std::size_t s = 0; s < m.modes[k].size(); ++s) os << (s ? " " : "") << sx(m.modes[k][s]) << ',' << sy(m.modes[k][s]);
      os << "\" fill=\"none\" stroke=\"" << color << "\" stroke-opacity=\"" << f3(0.25 + 0.75 * m.scores[k])
         << "\" stroke-width=\"2\"/>\n";
    }
  }
  os << "</g>\n";
  const auto marks = detail::markers(r, f);
  if (!marks.empty()) {
    os << "<g id=\"collisions\">\n";
    for (const auto& e : marks) {
      const Vec2 p = transform_point(to_ego, e.position);
      os << "<circle cx=\"" << sx(p) << "\" cy=\"" << sy(p) << "\" r=\"6.000\" fill=\"none\" stroke=\"#ff2020\""
         << " stroke-width=\"2\"/>\n";
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Writes frames x kinds files; returns their paths in frame order.
inline std::vector<std::filesystem::path> emit_plots(const RunRecord& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw PlotError("cannot create plot directory " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& f : r.frames) {
    for (const auto& kind : plot_kinds()) {
      const auto path = dir / plot_file_name(f.t, kind);
      std::ofstream os(path, std::ios::binary);
      if (!os) throw PlotError("cannot write " + path.string());
      os << (kind == "bev" ? bev_svg(r, f) : trajectory_svg(r, f));
      if (!os) throw PlotError("write failed: " + path.string());
      out.push_back(path);
    }
  }
  return out;
}

}  // namespace coop
