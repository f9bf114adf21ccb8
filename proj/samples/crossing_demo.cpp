// Runs the crossing template end to end and compares the predicted accident
// with the scripted one. Pass a directory to also keep the run record and SVGs.

#include <cstdlib>
#include <iostream>

#include "coop/coop.hpp"

int main(int argc, char** argv) {
  coop::PipelineConfig cfg;
  const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 0;
  const coop::Scenario scenario = coop::generate_scenario(seed, "crossing", coop::template_options(cfg));

  coop::Pipeline pipeline(scenario, cfg);
  coop::RunRecord record;
  record.config = pipeline.config();
  record.scenario = scenario;
  while (!pipeline.done()) {
    const coop::FrameRecord& f = record.frames.emplace_back(pipeline.step());
    std::cout << "frame " << f.t << ": " << f.tracks.size() << " tracks, " << f.predicted.size()
              << " predicted collisions\n";
  }
  record.events_pred = coop::consolidate_predictions(record.frames);
  record.events_gt = coop::ground_truth_events(scenario, cfg.threshold);
  coop::sort_events(record.events_gt);
  record.timing = pipeline.timing();

  std::cout << "predicted:\n" << coop::detail::events_text(record.events_pred);
  std::cout << "ground truth:\n" << coop::detail::events_text(record.events_gt);
  std::cout << coop::format_report(coop::evaluate({{"crossing", record}}));

  if (argc > 1) {
    coop::write_run_record(record, argv[1]);
    coop::emit_plots(record, std::filesystem::path(argv[1]) / "plots");
    std::cout << "record written to " << argv[1] << "\n";
  }
}
