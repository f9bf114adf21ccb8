#pragma once

// Scripted synthetic driving scenes.
//
// Every agent follows a kinematic script of constant speed / yaw-rate
// segments integrated frame by frame. The ego vehicle is the agent with id -1;
// one roadside infrastructure unit observes the scene from a fixed pose.

#include <charconv>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "coop/accident.hpp"
#include "coop/geometry.hpp"
#include "coop/motion.hpp"
#include "coop/tensor.hpp"

namespace coop {

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Segment {
  int frames = 1;  // how many frame steps this segment lasts; the last one repeats
  double speed = 0.0;
  double yaw_rate = 0.0;

  friend bool operator==(const Segment&, const Segment&) = default;
};

struct AgentScript {
  int id = 0;
  double length = 4.5;
  double width = 2.0;
  double height = 1.5;
  Pose2D start{};
  std::vector<Segment> segments;

  friend bool operator==(const AgentScript&, const AgentScript&) = default;
};

struct RigSpec {
  std::size_t views = 6;
  double hfov = 1.2;
  std::size_t image_width = 96;
  std::size_t image_height = 64;
  double mount_height = 1.6;

  CameraRig build() const { return make_ring_rig(views, mount_height, hfov, image_width, image_height); }
  friend bool operator==(const RigSpec&, const RigSpec&) = default;
};

struct Scenario {
  std::string template_name;
  std::uint64_t seed = 0;
  int frames = 12;
  double dt = 0.5;
  bool collision_script = false;
  std::vector<AgentScript> agents;  // ego first
  Pose2D infrastructure{};
  RigSpec ego_rig;
  RigSpec infrastructure_rig;

  friend bool operator==(const Scenario&, const Scenario&) = default;

  const AgentScript& ego() const { return agents.front(); }

  void validate() const {
    if (frames < 2) throw ScenarioError("scenario needs at least 2 frames");
    if (!(dt > 0.0)) throw ScenarioError("scenario dt must be positive");
    if (agents.size() < 2) throw ScenarioError("scenario needs at least one agent besides the ego");
    if (agents.front().id != kEgoId) throw ScenarioError("first agent must be the ego (id -1)");
    for (const auto& a : agents) {
      if (a.segments.empty()) throw ScenarioError("agent " + std::to_string(a.id) + " has no script");
      if (!(a.length > 0.0 && a.width > 0.0 && a.height > 0.0)) {
        throw ScenarioError("agent " + std::to_string(a.id) + " has non-positive dimensions");
      }
    }
  }
};

// Pose after `frame` steps of the script.
inline Pose2D pose_at(const AgentScript& a, int frame, double dt) {
  Pose2D p = a.start;
  std::size_t seg = 0;
  int used = 0;
  for (int f = 0; f < frame; ++f) {
    while (seg + 1 < a.segments.size() && used >= a.segments[seg].frames) ++seg, used = 0;
    const Segment& s = a.segments[seg];
    if (s.yaw_rate == 0.0) {
      p.x += s.speed * dt * std::cos(p.yaw);
      p.y += s.speed * dt * std::sin(p.yaw);
    } else {
      const double r = s.speed / s.yaw_rate, next = p.yaw + s.yaw_rate * dt;
      p.x += r * (std::sin(next) - std::sin(p.yaw));
      p.y += r * (std::cos(p.yaw) - std::cos(next));
      p.yaw = normalize_angle(next);
    }
    ++used;
  }
  return p;
}

inline Box box_at(const AgentScript& a, int frame, double dt) {
  const Pose2D p = pose_at(a, frame, dt);
  return {p.x, p.y, a.length, a.width, p.yaw};
}

inline AgentTrajectories ground_truth_trajectories(const Scenario& s) {
  AgentTrajectories t;
  for (const auto& a : s.agents) t.ids.push_back(a.id);
  for (int f = 0; f < s.frames; ++f) {
    TrajectoryFrame fr{f, {}};
    for (const auto& a : s.agents) fr.boxes.push_back(box_at(a, f, s.dt));
    t.frames.push_back(std::move(fr));
  }
  return t;
}

inline std::vector<CollisionEvent> ground_truth_events(const Scenario& s, double threshold) {
  return detect_collisions(ground_truth_trajectories(s), threshold);
}

// ---------------------------------------------------------------------------
// Templates.

inline const std::vector<std::string>& template_names() {
  static const std::vector<std::string> names{"crossing", "following", "merging", "benign"};
  return names;
}

struct TemplateOptions {
  int frames = 12;
  double dt = 0.5;
  double ego_speed = 3.0;
  double threshold = 0.5;
  RigSpec ego_rig{};
  RigSpec infrastructure_rig{6, 1.2, 96, 64, 5.0};
};

namespace detail {

struct Jitter {
  RngSeed seed;
  std::uint64_t next = 0;
  double operator()(double lo, double hi) { return lo + (hi - lo) * counter_uniform(seed, next++); }
};

inline AgentScript straight(int id, Pose2D start, double speed, double length = 4.5, double width = 2.0,
                            double height = 1.5) {
  return {id, length, width, height, start, {{1, speed, 0.0}}};
}

inline Scenario crossing_scene(Jitter& j, const TemplateOptions& o) {
  Scenario s;
  const int meet = static_cast<int>(std::lround(j(6.0, 8.0)));
  const double x_meet = o.ego_speed * o.dt * meet;
  const double v = j(2.5, 3.5);
  s.agents.push_back(straight(kEgoId, {0, 0, 0}, o.ego_speed, 4.5, 2.0, 1.6));
  s.agents.push_back(straight(1, {x_meet, -v * o.dt * meet, std::numbers::pi / 2}, v));
  s.agents.push_back(straight(2, {x_meet + j(7.0, 10.0), j(6.5, 8.5), 0.0}, 0.0));
  s.agents.push_back(straight(3, {x_meet + j(26.0, 32.0), 3.5, std::numbers::pi}, j(1.5, 2.5)));
  s.infrastructure = {x_meet + j(-3.0, 3.0), j(9.0, 12.0), -std::numbers::pi / 2};
  s.collision_script = true;
  return s;
}

inline Scenario merging_scene(Jitter& j, const TemplateOptions& o) {
  Scenario s;
  s.agents.push_back(straight(kEgoId, {0, 0, 0}, o.ego_speed, 4.5, 2.0, 1.6));
  // A slower car in the left lane cuts into the ego lane ahead of the ego.
  const double v = j(1.6, 2.2);
  const int cruise = static_cast<int>(std::lround(j(1.0, 3.0)));
  const double rate = j(0.45, 0.6);
  AgentScript m{1, 4.5, 2.0, 1.5, {j(7.0, 9.0), 3.5, 0.0}, {{cruise, v, 0.0}, {2, v, -rate}, {2, v, rate}, {1, v, 0.0}}};
  s.agents.push_back(m);
  s.agents.push_back(straight(2, {j(-18.0, -14.0), -7.0, 0.0}, 0.0));
  s.infrastructure = {j(10.0, 14.0), j(-10.0, -8.0), std::numbers::pi / 2};
  s.collision_script = true;
  return s;
}

inline Scenario following_scene(Jitter& j, const TemplateOptions& o) {
  Scenario s;
  s.agents.push_back(straight(kEgoId, {0, 0, 0}, o.ego_speed, 4.5, 2.0, 1.6));
  s.agents.push_back(straight(1, {j(9.0, 12.0), 0.0, 0.0}, o.ego_speed));
  s.agents.push_back(straight(2, {j(28.0, 34.0), 4.0, std::numbers::pi}, j(2.0, 3.0)));
  s.infrastructure = {j(10.0, 14.0), j(8.0, 10.0), -std::numbers::pi / 2};
  return s;
}

inline Scenario benign_scene(Jitter& j, const TemplateOptions& o) {
  Scenario s;
  s.agents.push_back(straight(kEgoId, {0, 0, 0}, o.ego_speed, 4.5, 2.0, 1.6));
  s.agents.push_back(straight(1, {j(6.0, 10.0), j(7.5, 9.0), 0.0}, 0.0));
  s.agents.push_back(straight(2, {j(-6.0, -2.0), -4.5, 0.0}, o.ego_speed));
  s.agents.push_back(straight(3, {j(30.0, 36.0), 4.5, std::numbers::pi}, j(2.0, 3.0)));
  s.infrastructure = {j(10.0, 14.0), j(-11.0, -9.0), std::numbers::pi / 2};
  return s;
}

inline std::uint64_t name_salt(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

inline std::size_t expected_events(const std::string& name) {
  return name == "crossing" || name == "merging" ? 1 : 0;
}

}  // namespace detail

// Deterministic in (seed, template). Jittered layouts are checked against the
// template contract and redrawn until one satisfies it.
inline Scenario generate_scenario(std::uint64_t seed, const std::string& name, const TemplateOptions& o = {}) {
  Scenario (*make)(detail::Jitter&, const TemplateOptions&) = nullptr;
  if (name == "crossing") make = detail::crossing_scene;
  else if (name == "merging") make = detail::merging_scene;
  else if (name == "following") make = detail::following_scene;
  else if (name == "benign") make = detail::benign_scene;
  else throw ScenarioError("unknown template '" + name + "'");
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    detail::Jitter j{derive(derive(RngSeed{seed}, detail::name_salt(name)), attempt)};
    Scenario s = make(j, o);
    s.template_name = name;
    s.seed = seed;
    s.frames = o.frames;
    s.dt = o.dt;
    s.ego_rig = o.ego_rig;
    s.infrastructure_rig = o.infrastructure_rig;
    s.validate();
    if (ground_truth_events(s, o.threshold).size() == detail::expected_events(name)) return s;
  }
  throw ScenarioError("template '" + name + "' produced no valid layout for seed " + std::to_string(seed));
}

// ---------------------------------------------------------------------------
// Text form.

namespace detail {

inline std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

inline std::string serialize_scenario(const Scenario& s) {
  std::ostringstream os;
  auto rig = [&](const char* tag, const RigSpec& r) {
    os << tag << ' ' << r.views << ' ' << detail::num(r.hfov) << ' ' << r.image_width << ' ' << r.image_height << ' '
       << detail::num(r.mount_height) << '\n';
  };
  os << "scenario 1\n";
  os << "template " << s.template_name << '\n';
  os << "seed " << s.seed << '\n';
  os << "frames " << s.frames << '\n';
  os << "dt " << detail::num(s.dt) << '\n';
  os << "collision_script " << (s.collision_script ? 1 : 0) << '\n';
  os << "infrastructure " << detail::num(s.infrastructure.x) << ' ' << detail::num(s.infrastructure.y) << ' '
     << detail::num(s.infrastructure.yaw) << '\n';
  rig("ego_rig", s.ego_rig);
  rig("infrastructure_rig", s.infrastructure_rig);
  for (const auto& a : s.agents) {
    os << "agent " << a.id << ' ' << detail::num(a.length) << ' ' << detail::num(a.width) << ' '
       << detail::num(a.height) << ' ' << detail::num(a.start.x) << ' ' << detail::num(a.start.y) << ' '
       << detail::num(a.start.yaw) << ' ' << a.segments.size();
    for (const auto& g : a.segments) os << ' ' << g.frames << ' ' << detail::num(g.speed) << ' ' << detail::num(g.yaw_rate);
    os << '\n';
  }
  return os.str();
}

inline Scenario parse_scenario(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  Scenario s;
  bool header = false;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto need = [&](bool ok) {
      if (!ok) throw ScenarioError("scenario line " + std::to_string(line_no) + ": cannot parse '" + line + "'");
    };
    if (key == "scenario") {
      int version = 0;
      need(static_cast<bool>(ls >> version) && version == 1);
      header = true;
    } else if (key == "template") {
      need(static_cast<bool>(ls >> s.template_name));
    } else if (key == "seed") {
      need(static_cast<bool>(ls >> s.seed));
    } else if (key == "frames") {
      need(static_cast<bool>(ls >> s.frames));
    } else if (key == "dt") {
      need(static_cast<bool>(ls >> s.dt));
    } else if (key == "collision_script") {
      int v = 0;
      need(static_cast<bool>(ls >> v));
      s.collision_script = v != 0;
    } else if (key == "infrastructure") {
      need(static_cast<bool>(ls >> s.infrastructure.x >> s.infrastructure.y >> s.infrastructure.yaw));
    } else if (key == "ego_rig" || key == "infrastructure_rig") {
      RigSpec& r = key == "ego_rig" ? s.ego_rig : s.infrastructure_rig;
      need(static_cast<bool>(ls >> r.views >> r.hfov >> r.image_width >> r.image_height >> r.mount_height));
    } else if (key == "agent") {
      AgentScript a;
      std::size_t n = 0;
      need(static_cast<bool>(ls >> a.id >> a.length >> a.width >> a.height >> a.start.x >> a.start.y >> a.start.yaw >> n));
      for (std::size_t k = 0; k < n; ++k) {
        Segment g;
        need(static_cast<bool>(ls >> g.frames >> g.speed >> g.yaw_rate));
        a.segments.push_back(g);
      }
      s.agents.push_back(std::move(a));
    } else {
      need(false);
    }
    std::string rest;
    need(!(ls >> rest));
  }
  if (!header) throw ScenarioError("missing 'scenario 1' header");
  s.validate();
  return s;
}

}  // namespace coop
