#pragma once

// Frame-by-frame orchestration of the full stack and the on-disk run record.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "coop/accident.hpp"
#include "coop/bev_encoder.hpp"
#include "coop/config.hpp"
#include "coop/fusion.hpp"
#include "coop/motion.hpp"
#include "coop/perception.hpp"
#include "coop/render.hpp"
#include "coop/scenario.hpp"

namespace coop {

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kInfrastructureId = 1000;
// Predicted tracks without a ground-truth identity are reported in this id range.
inline constexpr int kUnmatchedTrackBase = 100000;

inline TemplateOptions template_options(const PipelineConfig& cfg) {
  TemplateOptions o;
  o.frames = cfg.frames;
  o.dt = cfg.dt;
  o.threshold = cfg.threshold;
  o.ego_rig = {cfg.views, cfg.hfov, cfg.image_width, cfg.image_height, cfg.ego_mount_height};
  o.infrastructure_rig = {cfg.views, cfg.hfov, cfg.image_width, cfg.image_height, cfg.infrastructure_mount_height};
  return o;
}

struct PipelineWeights {
  EncoderWeights ego_encoder;
  EncoderWeights infrastructure_encoder;
  FusionParams fusion;
  PerceptionWeights perception;
  MotionWeights motion;
  AnchorSet anchors;
};

inline PipelineWeights make_pipeline_weights(const PipelineConfig& cfg) {
  const RngSeed seed{cfg.weight_seed};
  const BEVGrid grid = cfg.grid();
  PipelineWeights w;
  w.ego_encoder = make_encoder_weights(cfg.encoder(), grid, derive(seed, 1));
  w.infrastructure_encoder = make_encoder_weights(cfg.encoder(), grid, derive(seed, 2));
  w.fusion = FusionParams::seeded(cfg.channels, cfg.heads, cfg.sample_points, derive(seed, 3));
  std::fill(w.fusion.temporal.gate.values().begin(), w.fusion.temporal.gate.values().end(), cfg.gate);
  std::fill(w.fusion.v2x.gate.values().begin(), w.fusion.v2x.gate.values().end(), cfg.gate);
  w.perception = make_perception_weights(cfg.perception(), grid, derive(seed, 4));
  w.motion = make_motion_weights(cfg.motion(), cfg.modes, derive(seed, 5));
  w.anchors = make_anchor_set(cfg.modes, cfg.steps, cfg.dt, cfg.anchor_speed, cfg.anchor_yaw_rate);
  return w;
}

// ---------------------------------------------------------------------------
// Per-frame records.

struct GtBox {
  int id = 0;
  Box box;
};

struct MessageInfo {
  int agent_id = 0;
  int timestamp = 0;
  std::size_t bytes = 0;
  std::uint64_t checksum = 0;
};

struct TrackSummary {
  int id = 0;
  int gt_id = -1;
  Box box;  // world frame
  double score = 0.0;
  int age = 0;
  int coast = 0;
  double feature_norm = 0.0;
};

struct AgentMotion {
  int agent_id = 0;                       // reported id (ground-truth space)
  std::vector<double> scores;             // [K]
  std::vector<std::vector<Vec2>> modes;   // [K][T], ego frame at the frame time
};

struct FrameRecord {
  int t = 0;
  Pose2D ego_pose{};
  double ego_feature_norm = 0.0;
  std::size_t detections = 0;
  std::vector<GtBox> gt;
  std::vector<MessageInfo> messages;
  std::vector<TrackSummary> tracks;
  std::vector<AgentMotion> motion;
  std::vector<CollisionEvent> predicted;
  Tensor bev_energy;  // [H x W], RMS over channels of the fused map
};

inline const std::array<const char*, 7>& stage_names() {
  static const std::array<const char*, 7> n{"render", "encode", "temporal", "v2x", "perception", "motion", "accident"};
  return n;
}

struct StageTiming {
  std::array<double, 7> ms{};
  double total() const {
    double s = 0;
    for (double v : ms) s += v;
    return s;
  }
};

struct RunRecord {
  PipelineConfig config;
  Scenario scenario;
  std::vector<FrameRecord> frames;
  std::vector<CollisionEvent> events_pred;
  std::vector<CollisionEvent> events_gt;
  StageTiming timing;
};

// Intermediate maps of the most recent frame.
struct FrameTrace {
  BEVFeature ego_bev;       // encoder output
  BEVFeature temporal_bev;  // after temporal fusion
  std::optional<WarpResult> infrastructure_aligned;
  BEVFeature fused;         // input to perception
};

inline void sort_events(std::vector<CollisionEvent>& ev) {
  std::sort(ev.begin(), ev.end(), [](const CollisionEvent& a, const CollisionEvent& b) {
    return std::tie(a.timestamp, a.id_a, a.id_b) < std::tie(b.timestamp, b.id_a, b.id_b);
  });
}

namespace detail {

inline double l2(const Tensor& t) {
  double s = 0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

inline Tensor cell_energy(const BEVFeature& f) {
  const std::size_t c = f.channels();
  Tensor e({f.grid.height, f.grid.width});
  for (std::size_t i = 0; i < f.grid.height; ++i)
    for (std::size_t j = 0; j < f.grid.width; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < c; ++k) s += f.data(i, j, k) * f.data(i, j, k);
      e(i, j) = std::sqrt(s / double(c));
    }
  return e;
}

inline bool inside(const BEVGrid& g, Vec2 world) {
  const GridPoint p = world_to_cell(g, world);
  return p.u >= 0.0 && p.u <= double(g.height - 1) && p.v >= 0.0 && p.v <= double(g.width - 1);
}

class Stopwatch {
 public:
  explicit Stopwatch(double& acc) : acc_(acc), start_(std::chrono::steady_clock::now()) {}
  ~Stopwatch() {
    acc_ += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  double& acc_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

class Pipeline {
 public:
  Pipeline(Scenario scenario, PipelineConfig cfg) : scn_(std::move(scenario)), cfg_(std::move(cfg)) {
    scn_.validate();
    cfg_.validate();
    if (scn_.ego_rig.views != cfg_.views || scn_.infrastructure_rig.views != cfg_.views) {
      throw ConfigError("camera.views=" + std::to_string(cfg_.views) + " does not match the scenario rigs");
    }
    // Kinematic quantities follow the scenario being replayed.
    cfg_.frames = scn_.frames;
    cfg_.dt = scn_.dt;
    weights_ = make_pipeline_weights(cfg_);
    ego_rig_ = scn_.ego_rig.build();
    inf_rig_ = scn_.infrastructure_rig.build();
  }

  const PipelineConfig& config() const { return cfg_; }
  const Scenario& scenario() const { return scn_; }
  const PipelineWeights& weights() const { return weights_; }
  PipelineWeights& weights() { return weights_; }
  const FrameTrace& trace() const { return trace_; }
  const StageTiming& timing() const { return timing_; }
  int next_frame() const { return t_; }
  bool done() const { return t_ >= scn_.frames; }

  FrameRecord step(AttentionAudit* audit = nullptr) {
    if (done()) throw PipelineError("pipeline: all " + std::to_string(scn_.frames) + " frames already processed");
    try {
      return step_impl(audit);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw PipelineError("frame " + std::to_string(t_) + ": " + e.what());
    }
  }

 private:
  FrameRecord step_impl(AttentionAudit* audit) {
    const int t = t_;
    auto& ms = timing_.ms;
    const Pose2D ego_pose = pose_at(scn_.ego(), t, scn_.dt);
    const EncoderConfig enc = cfg_.encoder();
    const PerceptionConfig pcfg = cfg_.perception();
    FrameRecord rec;
    rec.t = t;
    rec.ego_pose = ego_pose;

    MultiViewImages ego_images, inf_images;
    {
      detail::Stopwatch sw(ms[0]);
      ego_images = render_ego(scn_, t);
      if (cfg_.v2x) inf_images = render_infrastructure(scn_, t);
    }
    BEVFeature ego_bev, inf_bev;
    {
      detail::Stopwatch sw(ms[1]);
      ego_bev = encode_bev(ego_images, ego_rig_, cfg_.grid(ego_pose), weights_.ego_encoder, enc, audit, kEgoId);
      if (cfg_.v2x) {
        inf_bev = encode_bev(inf_images, inf_rig_, cfg_.grid(scn_.infrastructure), weights_.infrastructure_encoder,
                             enc, audit, kInfrastructureId);
      }
    }
    trace_.ego_bev = ego_bev;
    trace_.infrastructure_aligned.reset();

    auto temporal = [&](const BEVFeature& in) {
      detail::Stopwatch sw(ms[2]);
      if (!cfg_.temporal) return in;
      BEVFeature out = temporal_fuse(in, temporal_state_, weights_.fusion.temporal, audit);
      temporal_state_.advance(out);
      return out;
    };
    auto cooperative = [&](const BEVFeature& in) {
      detail::Stopwatch sw(ms[3]);
      if (!cfg_.v2x) return in;
      const std::vector<std::uint8_t> msg = encode_message(inf_bev);
      rec.messages.push_back({kInfrastructureId, t, msg.size(), fnv1a(msg)});
      const BEVFeature received = decode_message(msg, cfg_.grid(), cfg_.channels);
      WarpResult aligned = align_infrastructure(received, received.grid.origin, ego_pose);
      BEVFeature out = v2x_fuse(in, aligned.feature, aligned.mask, weights_.fusion.v2x, audit);
      trace_.infrastructure_aligned = std::move(aligned);
      return out;
    };
    BEVFeature fused;
    if (cfg_.order == FusionOrder::kTemporalFirst) {
      trace_.temporal_bev = temporal(ego_bev);
      fused = cooperative(trace_.temporal_bev);
    } else {
      fused = temporal(cooperative(ego_bev));
      trace_.temporal_bev = fused;
    }
    trace_.fused = fused;
    rec.bev_energy = detail::cell_energy(fused);

    std::vector<Box> gt_boxes;
    std::vector<int> gt_ids;
    for (const auto& a : scn_.agents) {
      const Box b = box_at(a, t, scn_.dt);
      rec.gt.push_back({a.id, b});
      if (a.id != kEgoId && detail::inside(fused.grid, b.center())) {
        gt_boxes.push_back(b);
        gt_ids.push_back(a.id);
      }
    }

    PerceptionOutput perceived;
    {
      detail::Stopwatch sw(ms[4]);
      std::optional<std::vector<Detection>> oracle;
      if (cfg_.oracle_detections) oracle = oracle_detections(fused, gt_boxes, gt_ids);
      perceived = step_perception(fused, perception_state_, weights_.perception, pcfg, oracle, audit);
      if (!cfg_.oracle_detections) label_new_tracks(perceived.tracks, gt_boxes, gt_ids, pcfg.r_gate);
    }
    rec.detections = perceived.detections.size();
    rec.ego_feature_norm = detail::l2(perceived.ego.feature);
    for (const auto& tr : perceived.tracks) {
      rec.tracks.push_back({tr.id, tr.gt_id, tr.box, tr.score, tr.age, tr.coast, detail::l2(tr.feature)});
    }

    MotionOutput motion;
    {
      detail::Stopwatch sw(ms[5]);
      motion = predict_motion(perceived.tracks, perceived.ego, fused, weights_.anchors, weights_.motion, cfg_.modes,
                              cfg_.steps, audit);
    }
    std::map<int, int> reported;  // track id -> id in ground-truth space
    reported[kEgoId] = kEgoId;
    for (const auto& tr : perceived.tracks) reported[tr.id] = tr.gt_id >= 0 ? tr.gt_id : kUnmatchedTrackBase + tr.id;
    for (std::size_t a = 0; a < motion.agent_ids.size(); ++a) {
      AgentMotion am{reported.at(motion.agent_ids[a]), {}, {}};
      for (std::size_t k = 0; k < cfg_.modes; ++k) {
        am.scores.push_back(motion.scores(a, k));
        std::vector<Vec2> path;
        for (std::size_t s = 0; s < cfg_.steps; ++s) path.push_back({motion.trajectories(a, k, s, 0), motion.trajectories(a, k, s, 1)});
        am.modes.push_back(std::move(path));
      }
      rec.motion.push_back(std::move(am));
    }

    {
      detail::Stopwatch sw(ms[6]);
      const Pose2D to_ego = inverse(ego_pose);
      std::vector<Box> current;
      for (int id : motion.agent_ids) {
        if (id == kEgoId) {
          current.push_back({0.0, 0.0, scn_.ego().length, scn_.ego().width, 0.0});
          continue;
        }
        const auto it = std::find_if(perceived.tracks.begin(), perceived.tracks.end(),
                                     [&](const TrackQuery& q) { return q.id == id; });
        const Vec2 c = transform_point(to_ego, it->box.center());
        current.push_back({c.x, c.y, it->box.length, it->box.width, normalize_angle(it->box.yaw - ego_pose.yaw)});
      }
      for (CollisionEvent e :
           predict_accident(motion, current, ego_pose, cfg_.threshold, t, cfg_.mode_policy)) {
        e.id_a = reported.at(e.id_a);
        e.id_b = reported.at(e.id_b);
        if (e.id_a > e.id_b) std::swap(e.id_a, e.id_b);
        rec.predicted.push_back(e);
      }
    }
    ++t_;
    return rec;
  }

  // Detector-driven runs: a fresh track inherits the identity of the nearest
  // ground-truth box within the association gate.
  static void label_new_tracks(std::vector<TrackQuery>& tracks, const std::vector<Box>& boxes,
                               const std::vector<int>& ids, double gate) {
    for (auto& tr : tracks) {
      if (tr.gt_id >= 0) continue;
      double best = gate;
      for (std::size_t k = 0; k < boxes.size(); ++k) {
        const double d = norm(boxes[k].center() - tr.box.center());
        if (d <= best) best = d, tr.gt_id = ids[k];
      }
    }
  }

  Scenario scn_;
  PipelineConfig cfg_;
  PipelineWeights weights_;
  CameraRig ego_rig_, inf_rig_;
  TemporalState temporal_state_;
  PerceptionState perception_state_;
  FrameTrace trace_;
  StageTiming timing_;
  int t_ = 0;
};

// The first prediction issued for each pair.
inline std::vector<CollisionEvent> consolidate_predictions(const std::vector<FrameRecord>& frames) {
  std::vector<CollisionEvent> out;
  for (const auto& f : frames) {
    for (const auto& e : f.predicted) {
      const bool seen = std::any_of(out.begin(), out.end(),
                                    [&](const CollisionEvent& o) { return o.id_a == e.id_a && o.id_b == e.id_b; });
      if (!seen) out.push_back(e);
    }
  }
  sort_events(out);
  return out;
}

inline RunRecord run_pipeline(const Scenario& scenario, const PipelineConfig& cfg, AttentionAudit* audit = nullptr) {
  Pipeline p(scenario, cfg);
  RunRecord r;
  r.config = p.config();
  r.scenario = scenario;
  while (!p.done()) r.frames.push_back(p.step(audit));
  r.events_pred = consolidate_predictions(r.frames);
  r.events_gt = ground_truth_events(scenario, cfg.threshold);
  sort_events(r.events_gt);
  r.timing = p.timing();
  return r;
}

// ---------------------------------------------------------------------------
// Run record directory.
//
//   run.txt          config hash and weight seed
//   config.txt       effective configuration
//   scenario.txt     replayable scenario script
//   gt_boxes.txt     t id x y length width yaw
//   ego.txt          t x y yaw feature_norm detections
//   tracks.txt       t id gt_id x y length width yaw score age coast feature_norm
//   v2x.txt          t agent_id timestamp bytes checksum
//   motion.txt       t agent_id mode score x1 y1 ... xT yT
//   bev_energy.txt   t row e_0 ... e_{W-1}
//   predictions.txt  issue_frame, t, id_a, id_b, x, y, min_distance
//   events_pred.txt  t, id_a, id_b, x, y, min_distance
//   events_gt.txt    t, id_a, id_b, x, y, min_distance
//   timing.txt       stage milliseconds (wall clock, not reproducible)

namespace detail {

inline std::string f6(double v) { return fixed6(v); }

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw PipelineError("cannot write " + p.string());
  os << s;
  if (!os) throw PipelineError("write failed: " + p.string());
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw PipelineError("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

inline std::string box_text(const Box& b) {
  return f6(b.x) + ' ' + f6(b.y) + ' ' + f6(b.length) + ' ' + f6(b.width) + ' ' + f6(b.yaw);
}

inline std::string events_text(const std::vector<CollisionEvent>& ev) {
  std::ostringstream os;
  write_events(os, ev);
  return os.str();
}

}  // namespace detail

inline std::string run_info_text(std::uint64_t hash, std::uint64_t seed) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash));
  return std::string("config_hash ") + hex + "\nweight_seed " + std::to_string(seed) + "\n";
}

// Every file of a run directory; all but timing.txt are reproducible bit for bit.
inline std::vector<std::string> run_record_files() {
  return {"run.txt", "config.txt", "scenario.txt", "gt_boxes.txt", "ego.txt", "tracks.txt", "v2x.txt", "motion.txt",
          "bev_energy.txt", "predictions.txt", "events_pred.txt", "events_gt.txt", "timing.txt"};
}

inline void write_run_record(const RunRecord& r, const std::filesystem::path& dir) {
  using detail::f6;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw PipelineError("cannot create run directory " + dir.string());
  std::ostringstream gt, ego, tracks, v2x, motion, energy, preds, timing;
  for (const auto& f : r.frames) {
    for (const auto& g : f.gt) gt << f.t << ' ' << g.id << ' ' << detail::box_text(g.box) << '\n';
    ego << f.t << ' ' << f6(f.ego_pose.x) << ' ' << f6(f.ego_pose.y) << ' ' << f6(f.ego_pose.yaw) << ' '
        << f6(f.ego_feature_norm) << ' ' << f.detections << '\n';
    for (const auto& tr : f.tracks) {
      tracks << f.t << ' ' << tr.id << ' ' << tr.gt_id << ' ' << detail::box_text(tr.box) << ' ' << f6(tr.score) << ' '
             << tr.age << ' ' << tr.coast << ' ' << f6(tr.feature_norm) << '\n';
    }
    for (const auto& m : f.messages) {
      char hex[17];
      std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(m.checksum));
      v2x << f.t << ' ' << m.agent_id << ' ' << m.timestamp << ' ' << m.bytes << ' ' << hex << '\n';
    }
    for (const auto& m : f.motion) {
      for (std::size_t k = 0; k < m.modes.size(); ++k) {
        motion << f.t << ' ' << m.agent_id << ' ' << k << ' ' << f6(m.scores[k]);
        for (const Vec2 p : m.modes[k]) motion << ' ' << f6(p.x) << ' ' << f6(p.y);
        motion << '\n';
      }
    }
    for (std::size_t i = 0; i < f.bev_energy.dim(0); ++i) {
      energy << f.t << ' ' << i;
      for (std::size_t j = 0; j < f.bev_energy.dim(1); ++j) energy << ' ' << f6(f.bev_energy(i, j));
      energy << '\n';
    }
    for (const auto& e : f.predicted) preds << f.t << ", " << format_event(e) << '\n';
  }
  for (std::size_t s = 0; s < stage_names().size(); ++s) timing << stage_names()[s] << ' ' << f6(r.timing.ms[s]) << '\n';
  timing << "total " << f6(r.timing.total()) << '\n';

  detail::write_text(dir / "run.txt", run_info_text(config_hash(r.config), r.config.weight_seed));
  detail::write_text(dir / "config.txt", serialize_config(r.config));
  detail::write_text(dir / "scenario.txt", serialize_scenario(r.scenario));
  detail::write_text(dir / "gt_boxes.txt", gt.str());
  detail::write_text(dir / "ego.txt", ego.str());
  detail::write_text(dir / "tracks.txt", tracks.str());
  detail::write_text(dir / "v2x.txt", v2x.str());
  detail::write_text(dir / "motion.txt", motion.str());
  detail::write_text(dir / "bev_energy.txt", energy.str());
  detail::write_text(dir / "predictions.txt", preds.str());
  detail::write_text(dir / "events_pred.txt", detail::events_text(r.events_pred));
  detail::write_text(dir / "events_gt.txt", detail::events_text(r.events_gt));
  detail::write_text(dir / "timing.txt", timing.str());
}

inline RunRecord read_run_record(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw PipelineError("not a run directory: " + dir.string());
  RunRecord r;
  r.config = parse_config(detail::read_text(dir / "config.txt"));
  {
    const std::string expect = run_info_text(config_hash(r.config), r.config.weight_seed);
    if (detail::read_text(dir / "run.txt") != expect) {
      throw PipelineError(dir.string() + "/run.txt: config hash or seed does not match config.txt");
    }
  }
  try {
    r.scenario = parse_scenario(detail::read_text(dir / "scenario.txt"));
  } catch (const ScenarioError& e) {
    throw PipelineError(dir.string() + "/scenario.txt: " + e.what());
  }
  r.frames.resize(static_cast<std::size_t>(r.scenario.frames));
  for (int t = 0; t < r.scenario.frames; ++t) {
    auto& f = r.frames[static_cast<std::size_t>(t)];
    f.t = t;
    f.bev_energy = Tensor({r.config.grid_height, r.config.grid_width});
  }
  auto frame = [&](int t, const std::string& file) -> FrameRecord& {
    if (t < 0 || t >= r.scenario.frames) throw PipelineError(file + ": frame " + std::to_string(t) + " out of range");
    return r.frames[static_cast<std::size_t>(t)];
  };
  auto parse = [&](const std::string& file, auto&& fn) {
    int n = 0;
    for (const auto& line : detail::lines_of(detail::read_text(dir / file))) {
      ++n;
      std::istringstream is(line);
      if (!fn(is)) throw PipelineError(file + " line " + std::to_string(n) + ": cannot parse '" + line + "'");
    }
  };
  auto read_box = [](std::istream& is, Box& b) { return static_cast<bool>(is >> b.x >> b.y >> b.length >> b.width >> b.yaw); };

  parse("gt_boxes.txt", [&](std::istream& is) {
    int t;
    GtBox g;
    if (!(is >> t >> g.id) || !read_box(is, g.box)) return false;
    frame(t, "gt_boxes.txt").gt.push_back(g);
    return true;
  });
  parse("ego.txt", [&](std::istream& is) {
    int t;
    Pose2D p;
    double n;
    std::size_t d;
    if (!(is >> t >> p.x >> p.y >> p.yaw >> n >> d)) return false;
    auto& f = frame(t, "ego.txt");
    f.ego_pose = p, f.ego_feature_norm = n, f.detections = d;
    return true;
  });
  parse("tracks.txt", [&](std::istream& is) {
    int t;
    TrackSummary s;
    if (!(is >> t >> s.id >> s.gt_id) || !read_box(is, s.box)) return false;
    if (!(is >> s.score >> s.age >> s.coast >> s.feature_norm)) return false;
    frame(t, "tracks.txt").tracks.push_back(s);
    return true;
  });
  parse("v2x.txt", [&](std::istream& is) {
    int t;
    MessageInfo m;
    std::string hex;
    if (!(is >> t >> m.agent_id >> m.timestamp >> m.bytes >> hex)) return false;
    m.checksum = std::stoull(hex, nullptr, 16);
    frame(t, "v2x.txt").messages.push_back(m);
    return true;
  });
  parse("motion.txt", [&](std::istream& is) {
    int t, id;
    std::size_t k;
    double sc;
    if (!(is >> t >> id >> k >> sc)) return false;
    auto& f = frame(t, "motion.txt");
    if (f.motion.empty() || f.motion.back().agent_id != id || f.motion.back().modes.size() != k) {
      if (k != 0) return false;
      f.motion.push_back({id, {}, {}});
    }
    std::vector<Vec2> path;
    Vec2 p;
    while (is >> p.x >> p.y) path.push_back(p);
    f.motion.back().scores.push_back(sc);
    f.motion.back().modes.push_back(std::move(path));
    return true;
  });
  parse("bev_energy.txt", [&](std::istream& is) {
    int t;
    std::size_t i;
    if (!(is >> t >> i) || i >= r.config.grid_height) return false;
    auto& f = frame(t, "bev_energy.txt");
    for (std::size_t j = 0; j < r.config.grid_width; ++j)
      if (!(is >> f.bev_energy(i, j))) return false;
    return true;
  });
  for (const auto& line : detail::lines_of(detail::read_text(dir / "predictions.txt"))) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw PipelineError("predictions.txt: cannot parse '" + line + "'");
    const int t = std::stoi(line.substr(0, comma));
    frame(t, "predictions.txt").predicted.push_back(parse_event(line.substr(comma + 2)));
  }
  auto events = [&](const char* file) {
    std::istringstream is(detail::read_text(dir / file));
    return read_events(is);
  };
  r.events_pred = events("events_pred.txt");
  r.events_gt = events("events_gt.txt");
  if (std::filesystem::exists(dir / "timing.txt")) {
    for (const auto& line : detail::lines_of(detail::read_text(dir / "timing.txt"))) {
      std::istringstream is(line);
      std::string name;
      double v = 0;
      is >> name >> v;
      for (std::size_t s = 0; s < stage_names().size(); ++s)
        if (name == stage_names()[s]) r.timing.ms[s] = v;
    }
  }
  return r;
}

}  // namespace coop
