// coopdrive: command-line front end for scenario generation, pipeline runs,
// evaluation, plotting and the self-test.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 runtime abort.

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "acceptance/suite.hpp"
#include "coop/coop.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeAbort = 3;

// Shared flags. Optional ones leave the config value alone when absent.
struct Options {
  std::string config_path;
  std::optional<std::string> template_name;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> v2x;
  std::optional<double> threshold;
  std::string out;
  unsigned threads = 1;
  std::vector<std::string> inputs;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw coop::ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void spill(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + p.string());
}

coop::PipelineConfig load_config(const Options& o) {
  coop::PipelineConfig cfg = o.config_path.empty() ? coop::PipelineConfig{} : coop::parse_config(slurp(o.config_path));
  if (o.v2x) cfg.v2x = *o.v2x == "on";
  if (o.threshold) cfg.threshold = *o.threshold;
  cfg.validate();
  return cfg;
}

coop::Scenario scenario_from_flags(const Options& o, const coop::PipelineConfig& cfg) {
  if (!o.template_name) throw coop::ConfigError("--template is required when no scenario file is given");
  return coop::generate_scenario(o.seed.value_or(0), *o.template_name, coop::template_options(cfg));
}

int cmd_generate(const Options& o) {
  const auto cfg = load_config(o);
  const std::string text = coop::serialize_scenario(scenario_from_flags(o, cfg));
  if (o.out.empty()) {
    std::cout << text;
  } else {
    spill(o.out, text);
  }
  return kOk;
}

// One scenario writes its record to --out; several go to --out/<file stem>,
// processed concurrently.
int cmd_run(const Options& o) {
  if (o.out.empty()) throw coop::ConfigError("run needs --out");
  const auto cfg = load_config(o);
  std::vector<std::pair<fs::path, coop::Scenario>> jobs;
  if (o.inputs.empty()) {
    jobs.emplace_back(o.out, scenario_from_flags(o, cfg));
  } else {
    for (const auto& in : o.inputs) {
      const fs::path dir = o.inputs.size() == 1 ? fs::path(o.out) : fs::path(o.out) / fs::path(in).stem();
      jobs.emplace_back(dir, coop::parse_scenario(slurp(in)));
    }
  }
  std::vector<std::exception_ptr> failures(jobs.size());
  const unsigned per_run = jobs.size() > 1 ? 1u : o.threads;
  coop::set_num_threads(jobs.size() > 1 ? o.threads : 1u);
  coop::parallel_for(jobs.size(), [&](std::size_t k) {
    try {
      const auto record = coop::run_pipeline(jobs[k].second, cfg);
      coop::write_run_record(record, jobs[k].first);
    } catch (...) {
      failures[k] = std::current_exception();
    }
  });
  coop::set_num_threads(per_run);
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);
  for (const auto& [dir, _] : jobs) std::cout << dir.string() << "\n";
  return kOk;
}

coop::RunRecord load_record(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw coop::ConfigError("no run record at " + dir.string());
  return coop::read_run_record(dir);
}

int cmd_eval(const Options& o) {
  std::vector<std::pair<std::string, coop::RunRecord>> records;
  for (const auto& in : o.inputs) records.emplace_back(fs::path(in).filename().string(), load_record(in));
  const std::string report = coop::format_report(coop::evaluate(records));
  if (o.out.empty()) {
    std::cout << report;
  } else {
    spill(o.out, report);
  }
  return kOk;
}

int cmd_plot(const Options& o) {
  const fs::path record_dir = o.inputs.at(0);
  const fs::path out = o.out.empty() ? record_dir / "plots" : fs::path(o.out);
  for (const auto& p : coop::emit_plots(load_record(record_dir), out)) std::cout << p.string() << "\n";
  return kOk;
}

int cmd_selftest() {
  const auto results = coop::acceptance::run_all(std::cout);
  for (const auto& r : results)
    if (!r.pass) return kRuntimeAbort;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cooperative perception and accident prediction pipeline"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* c) { c->add_option("--config", o.config_path, "Pipeline config file")->check(CLI::ExistingFile); };
  auto add_scenario_flags = [&](CLI::App* c) {
    c->add_option("--template", o.template_name, "Scenario template")
        ->check(CLI::IsMember(coop::template_names()));
    c->add_option("--seed", o.seed, "Scenario seed");
  };
  auto add_run_flags = [&](CLI::App* c) {
    c->add_option("--v2x", o.v2x, "Cooperative fusion on|off")->check(CLI::IsMember({"on", "off"}));
    c->add_option("--threshold", o.threshold, "Collision distance threshold in metres")->check(CLI::NonNegativeNumber);
  };

  auto* generate = app.add_subcommand("generate", "Write a scenario file");
  add_config(generate);
  add_scenario_flags(generate);
  add_run_flags(generate);
  generate->add_option("--out", o.out, "Output file (default: stdout)");

  auto* run = app.add_subcommand("run", "Run the pipeline on scenarios and write run records");
  add_config(run);
  add_scenario_flags(run);
  add_run_flags(run);
  run->add_option("--out", o.out, "Record directory")->required();
  run->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  run->add_option("scenarios", o.inputs, "Scenario files (default: generate from --template/--seed)");

  auto* eval = app.add_subcommand("eval", "Aggregate run records into a report");
  eval->add_option("records", o.inputs, "Run record directories")->required();
  eval->add_option("--out", o.out, "Report file (default: stdout)");

  auto* plot = app.add_subcommand("plot", "Write SVG plots for a run record");
  plot->add_option("record", o.inputs, "Run record directory")->required()->expected(1);
  plot->add_option("--out", o.out, "Plot directory (default: <record>/plots)");

  auto* selftest = app.add_subcommand("selftest", "Run the oracle and gradient acceptance suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    coop::set_num_threads(o.threads);
    if (generate->parsed()) return cmd_generate(o);
    if (run->parsed()) return cmd_run(o);
    if (eval->parsed()) return cmd_eval(o);
    if (plot->parsed()) return cmd_plot(o);
    if (selftest->parsed()) return cmd_selftest();
  } catch (const coop::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const coop::ScenarioError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeAbort;
  }
  return kConfigError;
}
