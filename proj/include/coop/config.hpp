#pragma once

// Pipeline configuration: a sectioned key=value text file.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "coop/accident.hpp"
#include "coop/bev_encoder.hpp"
#include "coop/motion.hpp"
#include "coop/perception.hpp"

namespace coop {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FusionOrder { kTemporalFirst, kV2xFirst };

struct PipelineConfig {
  // [scenario]
  std::string template_name = "crossing";
  int frames = 12;
  double dt = 0.5;

  // [grid]
  std::size_t grid_height = 50;
  std::size_t grid_width = 50;
  double grid_resolution = 1.0;

  // [camera]
  std::size_t views = 6;
  std::size_t image_width = 96;
  std::size_t image_height = 64;
  double hfov = 1.2;
  double ego_mount_height = 1.6;
  double infrastructure_mount_height = 5.0;

  // [encoder]
  std::size_t channels = 32;
  std::size_t heads = 2;
  std::size_t sample_points = 4;
  std::size_t encoder_layers = 6;
  bool share_layer_weights = false;
  std::vector<double> pillar_heights{-1.0, 0.0, 1.0, 2.0};

  // [fusion]
  bool temporal = true;
  bool v2x = true;
  FusionOrder order = FusionOrder::kTemporalFirst;
  double gate = 0.0;  // initial value of both residual gates

  // [perception]
  std::size_t det_queries = 16;
  std::size_t decoder_layers = 3;
  double tau_det = 0.5;
  double r_gate = 2.0;
  int max_coast = 2;
  bool oracle_detections = true;

  // [motion]
  std::size_t modes = 3;
  std::size_t steps = 6;
  double anchor_speed = 3.0;
  double anchor_yaw_rate = 0.25;

  // [accident]
  double threshold = 0.5;
  int time_tol = 1;
  double dist_tol = 2.0;
  ModePolicy mode_policy = ModePolicy::kTop1;

  // [run]
  std::uint64_t weight_seed = 2024;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;

  BEVGrid grid(Pose2D origin = {}) const { return {grid_height, grid_width, grid_resolution, origin}; }

  EncoderConfig encoder() const {
    return {channels, heads, sample_points, encoder_layers, share_layer_weights, pillar_heights, views};
  }

  PerceptionConfig perception() const {
    PerceptionConfig p;
    p.channels = channels;
    p.heads = heads;
    p.sample_points = sample_points;
    p.det_queries = det_queries;
    p.layers = decoder_layers;
    p.tau_det = tau_det;
    p.r_gate = r_gate;
    p.max_coast = max_coast;
    p.dt = dt;
    return p;
  }

  MotionConfig motion() const {
    MotionConfig m;
    m.channels = channels;
    m.heads = heads;
    m.sample_points = sample_points;
    m.modes = modes;
    m.steps = steps;
    m.dt = dt;
    m.anchor_speed = anchor_speed;
    return m;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (frames < 2) fail("scenario.frames must be at least 2");
    if (!(dt > 0.0)) fail("scenario.dt must be positive");
    if (grid_height < 2 || grid_width < 2) fail("grid must be at least 2x2");
    if (!(grid_resolution > 0.0)) fail("grid.resolution must be positive");
    if (views < 1) fail("camera.views must be positive");
    if (!(hfov > 0.0 && hfov < 3.14159)) fail("camera.hfov must lie in (0, pi)");
    if (image_width % 8 != 0 || image_height % 8 != 0) fail("camera image size must be divisible by 8");
    if (channels < 4 || channels % 4 != 0) fail("encoder.channels must be a positive multiple of 4");
    if (heads < 1 || channels % heads != 0) fail("encoder.heads must divide encoder.channels");
    if (sample_points < 1 || encoder_layers < 1) fail("encoder.sample_points and encoder.layers must be positive");
    if (pillar_heights.empty()) fail("encoder.pillar_heights must not be empty");
    if (det_queries < 1 || decoder_layers < 1) fail("perception.det_queries and perception.layers must be positive");
    if (r_gate < 0.0 || max_coast < 0) fail("perception.r_gate and perception.max_coast must be non-negative");
    if (modes < 1 || steps < 1) fail("motion.modes and motion.steps must be positive");
    if (threshold < 0.0 || time_tol < 0 || dist_tol < 0.0) fail("accident thresholds must be non-negative");
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError(key + ": not a number: '" + s + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& s) {
  Int v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError(key + ": not an integer: '" + s + "'");
  return v;
}

inline bool parse_switch(const std::string& key, const std::string& s) {
  if (s == "on" || s == "true" || s == "1") return true;
  if (s == "off" || s == "false" || s == "0") return false;
  throw ConfigError(key + ": expected on/off, got '" + s + "'");
}

// Visits every field with its section.key name, for both directions.
template <typename Fn>
void visit_config(PipelineConfig& c, Fn&& fn) {
  fn("scenario.template", c.template_name);
  fn("scenario.frames", c.frames);
  fn("scenario.dt", c.dt);
  fn("grid.height", c.grid_height);
  fn("grid.width", c.grid_width);
  fn("grid.resolution", c.grid_resolution);
  fn("camera.views", c.views);
  fn("camera.image_width", c.image_width);
  fn("camera.image_height", c.image_height);
  fn("camera.hfov", c.hfov);
  fn("camera.ego_mount_height", c.ego_mount_height);
  fn("camera.infrastructure_mount_height", c.infrastructure_mount_height);
  fn("encoder.channels", c.channels);
  fn("encoder.heads", c.heads);
  fn("encoder.sample_points", c.sample_points);
  fn("encoder.layers", c.encoder_layers);
  fn("encoder.share_layer_weights", c.share_layer_weights);
  fn("encoder.pillar_heights", c.pillar_heights);
  fn("fusion.temporal", c.temporal);
  fn("fusion.v2x", c.v2x);
  fn("fusion.order", c.order);
  fn("fusion.gate", c.gate);
  fn("perception.det_queries", c.det_queries);
  fn("perception.layers", c.decoder_layers);
  fn("perception.tau_det", c.tau_det);
  fn("perception.r_gate", c.r_gate);
  fn("perception.max_coast", c.max_coast);
  fn("perception.oracle_detections", c.oracle_detections);
  fn("motion.modes", c.modes);
  fn("motion.steps", c.steps);
  fn("motion.anchor_speed", c.anchor_speed);
  fn("motion.anchor_yaw_rate", c.anchor_yaw_rate);
  fn("accident.threshold", c.threshold);
  fn("accident.time_tol", c.time_tol);
  fn("accident.dist_tol", c.dist_tol);
  fn("accident.mode_policy", c.mode_policy);
  fn("run.weight_seed", c.weight_seed);
}

struct ToText {
  std::string operator()(const std::string& v) const { return v; }
  std::string operator()(bool v) const { return v ? "on" : "off"; }
  std::string operator()(double v) const { return fmt_double(v); }
  std::string operator()(FusionOrder v) const { return v == FusionOrder::kTemporalFirst ? "temporal_first" : "v2x_first"; }
  std::string operator()(ModePolicy v) const { return v == ModePolicy::kTop1 ? "top1" : "any"; }
  std::string operator()(const std::vector<double>& v) const {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) s += (k ? " " : "") + fmt_double(v[k]);
    return s;
  }
  template <typename Int>
    requires std::is_integral_v<Int>
  std::string operator()(Int v) const {
    return std::to_string(v);
  }
};

struct FromText {
  const std::string& key;
  const std::string& s;
  void operator()(std::string& v) const { v = s; }
  void operator()(bool& v) const { v = parse_switch(key, s); }
  void operator()(double& v) const { v = parse_double(key, s); }
  void operator()(FusionOrder& v) const {
    if (s == "temporal_first") v = FusionOrder::kTemporalFirst;
    else if (s == "v2x_first") v = FusionOrder::kV2xFirst;
    else throw ConfigError(key + ": expected temporal_first or v2x_first");
  }
  void operator()(ModePolicy& v) const {
    if (s == "top1") v = ModePolicy::kTop1;
    else if (s == "any") v = ModePolicy::kAnyMode;
    else throw ConfigError(key + ": expected top1 or any");
  }
  void operator()(std::vector<double>& v) const {
    v.clear();
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) v.push_back(parse_double(key, tok));
  }
  template <typename Int>
    requires std::is_integral_v<Int>
  void operator()(Int& v) const {
    v = parse_int<Int>(key, s);
  }
};

}  // namespace detail

inline std::string serialize_config(const PipelineConfig& cfg) {
  PipelineConfig c = cfg;
  boost::property_tree::ptree tree;
  detail::visit_config(c, [&](const char* key, auto& field) { tree.put(key, detail::ToText{}(field)); });
  std::ostringstream os;
  boost::property_tree::ini_parser::write_ini(os, tree);
  return os.str();
}

inline PipelineConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream is(text);
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  PipelineConfig c;
  std::set<std::string> known;
  detail::visit_config(c, [&](const char* key, auto& field) {
    known.insert(key);
    if (const auto v = tree.get_optional<std::string>(key)) detail::FromText{key, *v}(field);
  });
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      if (!known.contains(section + "." + key)) throw ConfigError("config: unknown key " + section + "." + key);
    }
  }
  c.validate();
  return c;
}

// 64-bit FNV-1a of the canonical serialization.
inline std::uint64_t config_hash(const PipelineConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : serialize_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace coop
