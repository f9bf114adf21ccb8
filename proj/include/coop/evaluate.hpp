#pragma once

// Aggregate metrics over run records.

#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "coop/pipeline.hpp"

namespace coop {

// Counts frame-to-frame changes of the track id bound to each ground-truth id.
inline int count_id_switches(const RunRecord& r) {
  std::map<int, int> last;
  int switches = 0;
  for (const auto& f : r.frames) {
    std::map<int, int> now;
    for (const auto& t : f.tracks) {
      if (t.gt_id < 0) continue;
      auto [it, fresh] = now.emplace(t.gt_id, t.id);
      if (!fresh && t.id < it->second) it->second = t.id;
    }
    for (const auto& [gt, id] : now) {
      auto it = last.find(gt);
      if (it != last.end() && it->second != id) ++switches;
      last[gt] = id;
    }
  }
  return switches;
}

struct RecordSummary {
  std::string name;
  AccidentScore score;
  std::size_t predicted = 0;
  std::size_t ground_truth = 0;
  double time_error_sum = 0.0;
  double position_error_sum = 0.0;
  int id_switches = 0;
  StageTiming timing;
  std::size_t frames = 0;
};

struct EvalReport {
  std::vector<RecordSummary> records;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  double precision = 1.0;  // vacuously 1 with no predictions
  double recall = 1.0;     // vacuously 1 with no ground-truth events
  double mean_time_error = 0.0;
  double mean_position_error = 0.0;
  int id_switches = 0;
  StageTiming timing;
  std::size_t frames = 0;
};

inline RecordSummary summarize(const std::string& name, const RunRecord& r) {
  RecordSummary s;
  s.name = name;
  s.score = score(r.events_pred, r.events_gt, r.config.time_tol, r.config.dist_tol);
  s.predicted = r.events_pred.size();
  s.ground_truth = r.events_gt.size();
  for (const auto& m : s.score.matches) {
    s.time_error_sum += m.time_error;
    s.position_error_sum += m.position_error;
  }
  s.id_switches = count_id_switches(r);
  s.timing = r.timing;
  s.frames = r.frames.size();
  return s;
}

inline EvalReport evaluate(const std::vector<std::pair<std::string, RunRecord>>& records) {
  if (records.empty()) throw std::invalid_argument("evaluate: no run records given");
  EvalReport rep;
  double time_sum = 0.0, pos_sum = 0.0;
  for (const auto& [name, r] : records) {
    RecordSummary s = summarize(name, r);
    rep.true_positives += s.score.true_positives;
    rep.false_positives += s.score.false_positives;
    rep.false_negatives += s.score.false_negatives;
    time_sum += s.time_error_sum;
    pos_sum += s.position_error_sum;
    rep.id_switches += s.id_switches;
    for (std::size_t k = 0; k < rep.timing.ms.size(); ++k) rep.timing.ms[k] += s.timing.ms[k];
    rep.frames += s.frames;
    rep.records.push_back(std::move(s));
  }
  const double tp = double(rep.true_positives);
  if (rep.true_positives + rep.false_positives > 0) rep.precision = tp / double(rep.true_positives + rep.false_positives);
  if (rep.true_positives + rep.false_negatives > 0) rep.recall = tp / double(rep.true_positives + rep.false_negatives);
  if (rep.true_positives > 0) {
    rep.mean_time_error = time_sum / tp;
    rep.mean_position_error = pos_sum / tp;
  }
  return rep;
}

inline std::string format_report(const EvalReport& rep) {
  auto f = [](double v) { return fixed6(v); };
  std::ostringstream os;
  os << "records " << rep.records.size() << '\n';
  for (const auto& s : rep.records) {
    os << "record " << s.name << " frames " << s.frames << " tp " << s.score.true_positives << " fp "
       << s.score.false_positives << " fn " << s.score.false_negatives << " id_switches " << s.id_switches << '\n';
  }
  os << "tp " << rep.true_positives << '\n';
  os << "fp " << rep.false_positives << '\n';
  os << "fn " << rep.false_negatives << '\n';
  os << "precision " << f(rep.precision) << '\n';
  os << "recall " << f(rep.recall) << '\n';
  os << "mean_time_error_frames " << f(rep.mean_time_error) << '\n';
  os << "mean_position_error_m " << f(rep.mean_position_error) << '\n';
  os << "id_switches " << rep.id_switches << '\n';
  const double per_frame = rep.frames ? 1.0 / double(rep.frames) : 0.0;
  for (std::size_t k = 0; k < rep.timing.ms.size(); ++k) {
    os << "runtime_ms_per_frame " << stage_names()[k] << ' ' << f(rep.timing.ms[k] * per_frame) << '\n';
  }
  return os.str();
}

}  // namespace coop
