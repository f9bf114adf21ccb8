#pragma once

// Hand-built scenes and reduced configurations for pipeline-level tests.

#include <numbers>

#include "coop/pipeline.hpp"

namespace coop::testing {

// Small enough that a full run takes well under a second.
inline PipelineConfig small_config() {
  PipelineConfig c;
  c.frames = 10;
  c.grid_height = 24;
  c.grid_width = 24;
  c.views = 4;
  c.image_width = 32;
  c.image_height = 24;
  c.hfov = 1.6;
  c.channels = 8;
  c.heads = 2;
  c.sample_points = 2;
  c.encoder_layers = 2;
  c.det_queries = 8;
  c.decoder_layers = 1;
  c.steps = 4;
  return c;
}

inline AgentScript parked(int id, Pose2D pose, double length, double width, double height) {
  return {id, length, width, height, pose, {{1, 0.0, 0.0}}};
}

// A car hidden from every ego camera behind a tall crosswise truck, in plain
// view of a roadside unit to its side.
struct OccludedScene {
  Scenario scenario;
  int hidden_id = 2;
};

inline OccludedScene occluded_scene(const PipelineConfig& cfg) {
  const TemplateOptions o = template_options(cfg);
  OccludedScene s;
  Scenario& scn = s.scenario;
  scn.template_name = "occluded";
  scn.frames = 2;
  scn.dt = cfg.dt;
  scn.ego_rig = o.ego_rig;
  scn.infrastructure_rig = o.infrastructure_rig;
  scn.agents.push_back(parked(kEgoId, {0.0, 0.0, 0.0}, 4.5, 2.0, 1.6));
  scn.agents.push_back(parked(1, {5.0, 0.0, std::numbers::pi / 2}, 12.0, 1.5, 4.0));
  scn.agents.push_back(parked(s.hidden_id, {9.0, 0.0, 0.0}, 4.5, 2.0, 1.5));
  scn.infrastructure = {9.0, 10.0, -std::numbers::pi / 2};
  return s;
}

inline Scenario without_agent(Scenario s, int id) {
  std::erase_if(s.agents, [&](const AgentScript& a) { return a.id == id; });
  return s;
}

}  // namespace coop::testing
