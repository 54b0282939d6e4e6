// Command-line front end: graph validation, scenario and file-driven runs,
// the sensor-fusion pipeline, and scripted runtime reconfiguration.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "agentflow/agentflow.hpp"

namespace {

using namespace agentflow;

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitValidation = 2;
constexpr int kExitStepLimit = 3;
constexpr int kExitReconfigRefused = 4;

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case Errc::parse:
    case Errc::io:
      return kExitIo;
    case Errc::agent_busy:
      return kExitReconfigRefused;
    default:
      return kExitValidation;
  }
}

std::uint64_t env_default_seed() {
  if (const char* s = std::getenv("AGENTFLOW_SEED")) {
    try {
      return std::stoull(s);
    } catch (...) {
      std::cerr << "warning: ignoring unparsable AGENTFLOW_SEED\n";
    }
  }
  return 1;
}

// Registry shared by file-driven runs: the scenario operators plus the
// fusion stages at the given window length.
std::unique_ptr<CustomOpRegistry> make_file_registry(std::size_t window) {
  auto reg = std::make_unique<CustomOpRegistry>();
  register_scenario_ops(*reg);
  register_fusion_ops(*reg, window);
  return reg;
}

struct BuiltSystem {
  std::unique_ptr<CustomOpRegistry> registry;
  std::unique_ptr<MultiAgentSystem> system;
};

BuiltSystem system_from_file(const std::string& path, std::uint64_t seed,
                             std::size_t fusion_window) {
  io::GraphFile file = io::load_graph_file(path);
  BuiltSystem out;
  out.registry = make_file_registry(fusion_window);
  out.system = std::make_unique<MultiAgentSystem>(
      build_system(file.graph, file.partition, seed, out.registry.get(),
                   file.env_input_map, file.env_output_map));
  return out;
}

bool is_scenario(const std::string& name) {
  for (const auto& s : scenario_names())
    if (s == name) return true;
  return false;
}

void write_outputs(std::ostream& os,
                   const std::vector<std::tuple<std::uint64_t, std::string, double>>& outputs) {
  os << "step,output,value\n";
  for (const auto& [step, name, value] : outputs)
    os << step << ',' << name << ',' << fmt_num(value) << '\n';
}

int finish_run(MultiAgentSystem& sys, const RunOutcome& outcome,
               const std::string& trace_out, const std::string& report_out) {
  io::RunReport report = io::make_report(sys, outcome.status);
  report.refused_step = outcome.refused_step;
  if (!trace_out.empty()) io::write_trace_file(sys.trace(), trace_out);
  if (!report_out.empty()) io::write_report_file(report, report_out);
  write_outputs(std::cout, outcome.outputs);
  std::cerr << "steps=" << report.steps << " injected=" << report.injected
            << " delivered=" << report.delivered << " in_flight=" << report.in_flight
            << " reconfig_dropped=" << report.reconfig_dropped
            << " status=" << report.exit_status << "\n";
  return outcome.exit_code;
}

int cmd_validate(const std::string& path) {
  io::GraphFile file = io::load_graph_file(path);
  auto reg = make_file_registry(8);
  auto report = validate_graph(file.graph, reg.get());
  if (report.empty()) {
    std::cout << "ok: graph is valid\n";
    return kExitOk;
  }
  std::cout << report_to_string(report);
  return report_valid(report) ? kExitOk : kExitValidation;
}

struct RunArgs {
  std::string target;
  std::string inputs;
  std::uint64_t seed = 1;
  std::uint64_t max_steps = 1'000'000;
  std::string trace_out;
  std::string report_out;
  bool quantize = false;
  std::uint64_t timeout = 8;
  std::size_t window = 8;
};

int cmd_run(const RunArgs& args) {
  io::InputTrace inputs = io::load_input_csv(args.inputs, args.quantize);
  std::unique_ptr<CustomOpRegistry> registry;
  std::unique_ptr<MultiAgentSystem> system;
  if (is_scenario(args.target)) {
    FusionParams fusion;
    fusion.window = args.window;
    Scenario s = make_scenario(args.target, args.seed, fusion, args.timeout);
    registry = std::move(s.registry);
    system = std::move(s.system);
  } else {
    BuiltSystem b = system_from_file(args.target, args.seed, args.window);
    registry = std::move(b.registry);
    system = std::move(b.system);
  }
  RunOutcome outcome = run_system(*system, inputs, args.max_steps);
  return finish_run(*system, outcome, args.trace_out, args.report_out);
}

struct FusionArgs {
  std::string trace;
  std::size_t window = 8;
  double closeness_threshold = 20.0;
  double confidence_threshold = 0.5;
  double rho = 1.5;
  double cap = 1000.0;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_fusion(const FusionArgs& args) {
  FusionParams params;
  params.window = args.window;
  params.closeness_threshold = args.closeness_threshold;
  params.confidence_threshold = args.confidence_threshold;
  params.rho = args.rho;
  params.closeness_cap = args.cap;
  params.validate();
  io::InputTrace trace = io::load_input_csv(args.trace);
  auto samples = io::sensor_pairs(trace);
  FusionRun run = run_fusion_pipeline(samples, params, args.seed);

  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!args.out.empty()) {
    file.open(args.out);
    if (!file) raise(Errc::io, "cannot write '" + args.out + "'");
    os = &file;
  }
  *os << "window_index,r,corr2,gamma,avg,confidence,fused,flag\n";
  for (const FusionResult& row : run.rows) {
    *os << row.window_index << ',' << fmt_num(row.r) << ',' << fmt_num(row.corr2) << ','
        << fmt_num(row.gamma) << ',' << fmt_num(row.average) << ','
        << fmt_num(row.confidence) << ',' << fmt_num(row.fused) << ','
        << fusion_flag_name(row.flag) << '\n';
  }
  return kExitOk;
}

struct ReconfigRunArgs {
  std::string graph;
  std::string script;
  std::string inputs;
  std::uint64_t seed = 1;
  std::uint64_t max_steps = 1'000'000;
  std::string trace_out;
  std::string report_out;
  bool quantize = false;
  std::size_t window = 8;
};

int cmd_reconfigure_run(const ReconfigRunArgs& args) {
  io::InputTrace inputs = io::load_input_csv(args.inputs, args.quantize);
  std::vector<io::ScriptEntry> script = io::load_script_file(args.script);
  ConfigurationStore images;
  for (const auto& entry : script)
    if (!images.has(entry.image)) images.put(entry.image, io::load_image_file(entry.image));
  BuiltSystem b = system_from_file(args.graph, args.seed, args.window);
  RunOutcome outcome = run_system(*b.system, inputs, args.max_steps, script, &images);
  return finish_run(*b.system, outcome, args.trace_out, args.report_out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-step simulator for reconfigurable multi-agent dataflow systems"};
  app.require_subcommand(1);
  const std::uint64_t default_seed = env_default_seed();

  std::string validate_path;
  CLI::App* validate = app.add_subcommand("validate", "Validate a graph description file");
  validate->add_option("graph", validate_path, "graph description file")->required();

  RunArgs run_args;
  run_args.seed = default_seed;
  CLI::App* run = app.add_subcommand("run", "Run a scenario or a graph file");
  run->add_option("target", run_args.target,
                  "scenario name (fig3-fine, fig5-mixed, fig6-control, fig7-nondet, "
                  "fig8-fusion) or graph file")
      ->required();
  run->add_option("--inputs", run_args.inputs, "input trace (csv, header row)")->required();
  run->add_option("--seed", run_args.seed, "scheduler seed");
  run->add_option("--max-steps", run_args.max_steps, "step bound");
  run->add_option("--trace-out", run_args.trace_out, "trace file to write");
  run->add_option("--report-out", run_args.report_out, "run report (json) to write");
  run->add_flag("--quantize-int", run_args.quantize, "round input values to integers");
  run->add_option("--timeout", run_args.timeout, "idle timeout for fig7-nondet");
  run->add_option("--window", run_args.window, "window length for fig8-fusion");

  FusionArgs fusion_args;
  fusion_args.seed = default_seed;
  CLI::App* fusion = app.add_subcommand("fusion", "Run the sensor-fusion pipeline over a trace");
  fusion->add_option("--trace", fusion_args.trace, "sensor trace (step,s1,s2)")->required();
  fusion->add_option("--window", fusion_args.window, "samples per window");
  fusion->add_option("--closeness-threshold", fusion_args.closeness_threshold,
                     "maximum sensor difference");
  fusion->add_option("--confidence-threshold", fusion_args.confidence_threshold,
                     "gate for accepting the average");
  fusion->add_option("--rho", fusion_args.rho, "threshold adaptation factor");
  fusion->add_option("--cap", fusion_args.cap, "threshold adaptation cap");
  fusion->add_option("--seed", fusion_args.seed, "scheduler seed");
  fusion->add_option("--out", fusion_args.out, "result rows (csv); stdout if omitted");

  ReconfigRunArgs rr_args;
  rr_args.seed = default_seed;
  CLI::App* rr = app.add_subcommand("reconfigure-run", "Run a graph file with scripted swaps");
  rr->add_option("graph", rr_args.graph, "graph description file")->required();
  rr->add_option("script", rr_args.script, "reconfiguration script (json)")->required();
  rr->add_option("--inputs", rr_args.inputs, "input trace (csv)")->required();
  rr->add_option("--seed", rr_args.seed, "scheduler seed");
  rr->add_option("--max-steps", rr_args.max_steps, "step bound");
  rr->add_option("--trace-out", rr_args.trace_out, "trace file to write");
  rr->add_option("--report-out", rr_args.report_out, "run report (json) to write");
  rr->add_flag("--quantize-int", rr_args.quantize, "round input values to integers");
  rr->add_option("--window", rr_args.window, "window length for fusion operators");

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) return cmd_validate(validate_path);
    if (run->parsed()) return cmd_run(run_args);
    if (fusion->parsed()) return cmd_fusion(fusion_args);
    if (rr->parsed()) return cmd_reconfigure_run(rr_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}
